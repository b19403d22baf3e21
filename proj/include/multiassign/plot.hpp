#pragma once

#include <iosfwd>
#include <string>

#include "multiassign/harness.hpp"

namespace multiassign {

// Parses the CSV written by write_metrics_csv. Throws ValidationError on a
// wrong header or malformed row.
MetricsLog read_metrics_csv(std::istream& is);

// Loss curves in the style of the paper's training-loss figure: one polyline
// per branch of loss_total against epoch (branch 0 is the primary one-to-one
// loss), linear axes with tick labels. Output depends only on the log.
std::string loss_curve_svg(const MetricsLog& log);

}  // namespace multiassign
