#pragma once

#include <string>
#include <utility>
#include <vector>

#include "layoutlab/layout.hpp"
#include "layoutlab/losses.hpp"

namespace layoutlab {

// A single metric value; samples where a metric has no meaning (empty side,
// too few boxes, nothing replaced) are flagged rather than set to NaN.
struct MetricValue {
  double value = 0.0;
  bool defined = false;
};

MetricValue defined_value(double v);

struct PRF {
  MetricValue pr, re, f1;
};

// Greedy same-label matching by decreasing overlap; only overlapping pairs
// are candidates. Ties resolve by (pred index, gt index).
MatchingSet match_greedy_iou(const Layout& pred, const Layout& gt);

// Greedy same-label matching by increasing center distance, same tie rule.
MatchingSet match_greedy_dist(const Layout& pred, const Layout& gt);

// Label multiset precision/recall/F1, positions ignored. An empty side
// leaves its ratio undefined.
PRF f1_labels(const Layout& pred, const Layout& gt);

// Label PRF counting only greedy-matched pairs with IoU >= 0.5.
PRF f1_iou05(const Layout& pred, const Layout& gt);

// Pairwise distance-weighted PRF: every ordered pair of matched predictions
// contributes 1 - |D_gt - D_pred| / sqrt(2), where D is the distance between
// box centers. Normalized by ordered pair counts of each side; a side with
// fewer than 2 boxes leaves its ratio undefined. Requires centers in [0,1].
PRF f1_dpw(const Layout& pred, const Layout& gt);

// Label multiset recall restricted to GT objects with the replaced flag.
// Undefined when nothing is flagged.
MetricValue recall_replaced(const Layout& pred, const Layout& gt);

struct SampleMetrics {
  MetricValue pr, re, f1;
  MetricValue pr05, re05, f105;
  MetricValue pr_dpw, re_dpw, f1_dpw;
  MetricValue re_repl;
};

SampleMetrics evaluate_sample(const Layout& pred, const Layout& gt);

struct MetricAggregate {
  double value = 0.0;
  bool defined = false;
  int n_defined = 0;
  int n_undefined = 0;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  MetricAggregate pr, re, f1;
  MetricAggregate pr05, re05, f105;
  MetricAggregate pr_dpw, re_dpw, f1_dpw;
  MetricAggregate re_repl;
};

// Macro average over the samples where each metric is defined; the F1
// aggregates are recomputed from the aggregated precision and recall rather
// than averaged per sample. Throws on an empty list.
MetricReport aggregate(const std::vector<SampleMetrics>& samples);

// JSON document with the aggregates, undefined counts, and per-sample
// values (null where undefined).
std::string to_json(const MetricReport& report);

// Fixed-width text table, one row per named report.
std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace layoutlab
