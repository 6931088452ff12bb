// Hyperparameter sweep executor. Runs are independent; failures (divergence)
// are recorded as data, not errors.
#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "advreg/analysis.hpp"
#include "advreg/common.hpp"
#include "advreg/schedule.hpp"
#include "advreg/trainer.hpp"

namespace advreg {

struct SweepEntry {
  double lambda_adv = 0.0;
  ScheduleParams schedule = static_schedule(0.0);
};

struct SweepRow {
  SweepEntry entry;
  std::string status;  // "ok" or "diverged@<t>"
  std::int64_t best_iter = -1;
  bool has_scores = false;
  double val_overall = 0.0;
  double test_overall = 0.0;
  double test_yesno = 0.0;
  double test_number = 0.0;
  double test_other = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;

  std::string csv() const {
    std::string out =
        "lambda_adv,lambda_grl,mu,w,c,status,best_iter,val_overall,"
        "test_overall,test_yesno,test_number,test_other\n";
    for (const auto& r : rows) {
      out += fmt_double(r.entry.lambda_adv) + "," +
             fmt_double(r.entry.schedule.c) + "," +
             std::to_string(r.entry.schedule.mu) + "," +
             std::to_string(r.entry.schedule.w) + "," +
             fmt_double(r.entry.schedule.c) + "," + r.status + "," +
             std::to_string(r.best_iter) + ",";
      if (r.has_scores) {
        out += fmt_double(r.val_overall) + "," + fmt_double(r.test_overall) +
               "," + fmt_double(r.test_yesno) + "," +
               fmt_double(r.test_number) + "," + fmt_double(r.test_other);
      } else {
        out += ",,,,";
      }
      out += "\n";
    }
    return out;
  }
};

// Executes one run per grid entry and scores the returned checkpoint on the
// val and test splits. Entries run concurrently up to `jobs`; results land in
// grid order regardless of scheduling.
inline SweepReport run_sweep(const std::vector<SweepEntry>& entries,
                             const ModelConfig& model_cfg,
                             const TrainConfig& base_config,
                             const DatasetBundle& bundle, int jobs = 1) {
  SweepReport report;
  report.rows.resize(entries.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= entries.size()) return;
      const SweepEntry& entry = entries[i];
      TrainConfig cfg = base_config;
      cfg.lambda_adv = entry.lambda_adv;
      cfg.schedule = entry.schedule;
      cfg.eval_train_split = false;

      SweepRow row;
      row.entry = entry;
      TrainResult res = train(model_cfg, cfg, bundle);
      row.best_iter = res.best_iter;
      if (res.diverged) {
        row.status = "diverged@" + std::to_string(res.diverged_at);
      } else {
        row.status = "ok";
      }
      // Score whatever checkpoint the run produced, if it survived long
      // enough to be evaluated at least once.
      if (!res.diverged || !res.log.evals.empty()) {
        SplitScores val = score_by_type(model_cfg, res.params, bundle.spec,
                                        bundle.val, cfg.batch_size);
        SplitScores test = score_by_type(model_cfg, res.params, bundle.spec,
                                         bundle.test, cfg.batch_size);
        row.has_scores = true;
        row.val_overall = val.overall;
        row.test_overall = test.overall;
        row.test_yesno = test.yesno;
        row.test_number = test.number;
        row.test_other = test.other;
      }
      report.rows[i] = std::move(row);
    }
  };

  const int n_jobs = std::max(1, jobs);
  if (n_jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_jobs));
    for (int j = 0; j < n_jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return report;
}

}  // namespace advreg
