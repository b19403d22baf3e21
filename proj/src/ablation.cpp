#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "multiassign/errors.hpp"
#include "multiassign/harness.hpp"

namespace multiassign {

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("MULTIASSIGN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<AblationCell> ablation_cells(const AblationSpec& spec, std::vector<AblationCell>* skipped) {
  std::vector<AblationCell> cells;
  auto add = [&](const AblationCell& c) {
    if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
  };
  for (std::size_t n_aux : spec.n_aux) {
    if (n_aux == 0) {
      add({0, false, AuxMode::kLora, spec.base.model.rank});
      continue;
    }
    for (bool diverse : spec.diverse) {
      AblationCell probe{n_aux, diverse, AuxMode::kLora, spec.base.model.rank};
      try {
        (void)strategy_set(n_aux, diverse);
      } catch (const ConfigError&) {
        if (skipped && std::find(skipped->begin(), skipped->end(), probe) == skipped->end()) skipped->push_back(probe);
        continue;
      }
      for (AuxMode mode : spec.aux_modes) {
        if (mode == AuxMode::kFullFfn) {
          add({n_aux, diverse, mode, spec.base.model.rank});
          continue;
        }
        for (std::size_t rank : spec.ranks) add({n_aux, diverse, mode, rank});
      }
    }
  }
  return cells;
}

ExperimentConfig cell_config(const ExperimentConfig& base, const AblationCell& cell, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.model.n_aux = cell.n_aux;
  cfg.model.aux_mode = cell.aux_mode;
  cfg.model.rank = cell.rank;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  cfg.train.diverse = cell.diverse;
  // Per-branch overrides only make sense for the n_aux they were written for.
  if (cfg.train.k_set.size() != cell.n_aux) cfg.train.k_set.clear();
  if (cfg.train.tau_set.size() != cell.n_aux) cfg.train.tau_set.clear();
  if (cfg.train.alpha_set.size() != cell.n_aux) cfg.train.alpha_set.clear();
  return cfg;
}

AblationResult run_ablation(const AblationSpec& spec, std::size_t threads) {
  AblationResult result;
  const auto cells = ablation_cells(spec, &result.skipped);
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  if (spec.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (const auto& cell : cells) cell_config(spec.base, cell, spec.seeds.front()).validate();

  const std::size_t n_seeds = spec.seeds.size();
  const std::size_t n_jobs = cells.size() * n_seeds;
  std::vector<double> losses(n_jobs), aps(n_jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= n_jobs) return;
      try {
        const ExperimentConfig cfg = cell_config(spec.base, cells[job / n_seeds], spec.seeds[job % n_seeds]);
        const TrainResult tr = train(cfg);
        losses[job] = tr.log.final_o2o_primary_loss();
        aps[job] = tr.log.final_primary_ap50();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n_jobs);
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, n_jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t c = 0; c < cells.size(); ++c) {
    AblationRow row;
    row.cell = cells[c];
    row.seed_count = n_seeds;
    row.o2o_losses.assign(losses.begin() + static_cast<std::ptrdiff_t>(c * n_seeds),
                          losses.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_seeds));
    row.ap50s.assign(aps.begin() + static_cast<std::ptrdiff_t>(c * n_seeds),
                     aps.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_seeds));
    row.median_o2o_loss = median(row.o2o_losses);
    row.median_ap50 = median(row.ap50s);
    row.param_count = param_count(Model(cell_config(spec.base, cells[c], spec.seeds.front()).model)).total();
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_ablation_csv(const AblationResult& result, std::ostream& os) {
  os << kAblationHeader << '\n';
  char buf[256];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%s,%zu,%zu,%.6g,%.6g,%zu\n", r.cell.n_aux, r.cell.diverse ? "yes" : "no",
                  to_string(r.cell.aux_mode).c_str(), r.cell.rank, r.seed_count, r.median_o2o_loss, r.median_ap50,
                  r.param_count);
    os << buf;
  }
}

}  // namespace multiassign
