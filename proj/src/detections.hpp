#pragma once

#include <vector>

#include "multiassign/harness.hpp"

namespace multiassign {

// Every (query, class) cell of `branch` with score >= score_threshold becomes a
// detection; with use_nms, greedy NMS runs per class before appending.
void append_detections(const BranchOutput& branch, std::size_t scene, bool use_nms, double score_threshold,
                       double nms_iou, std::vector<Detection>& out);

}  // namespace multiassign
