#include "layoutlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "layoutlab/check.hpp"
#include "layoutlab/geometry.hpp"

namespace layoutlab {

namespace {

MetricValue undefined_value() { return {}; }

// F1 of a (pr, re) pair; undefined when either side is, 0 when both are 0.
MetricValue combine_f1(const MetricValue& pr, const MetricValue& re) {
  if (!pr.defined || !re.defined) return undefined_value();
  const double denom = pr.value + re.value;
  return defined_value(denom > 0.0 ? 2.0 * pr.value * re.value / denom : 0.0);
}

std::map<int, int> label_counts(const Layout& l) {
  std::map<int, int> counts;
  for (const LayoutObject& o : l.objects) ++counts[o.category];
  return counts;
}

int multiset_overlap(const std::map<int, int>& a, const std::map<int, int>& b) {
  int total = 0;
  for (const auto& [label, count] : a) {
    const auto it = b.find(label);
    if (it != b.end()) total += std::min(count, it->second);
  }
  return total;
}

// Greedy selection over candidate (score, pred, gt) triples sorted so that
// the best pair comes first; equal scores fall back to index order.
MatchingSet greedy_select(std::vector<std::tuple<double, int, int>> cands, int n_pred,
                          int n_gt) {
  std::sort(cands.begin(), cands.end());
  std::vector<char> pred_used(n_pred, 0), gt_used(n_gt, 0);
  MatchingSet pairs;
  for (const auto& [score, i, j] : cands) {
    if (pred_used[i] || gt_used[j]) continue;
    pred_used[i] = 1;
    gt_used[j] = 1;
    pairs.push_back({i, j});
  }
  return pairs;
}

void check_centers_normalized(const Layout& l, const char* side) {
  for (const LayoutObject& o : l.objects) {
    check_arg(o.box.x >= 0.0 && o.box.x <= 1.0 && o.box.y >= 0.0 && o.box.y <= 1.0,
              std::string("f1_dpw: ") + side + " box center outside [0,1]");
  }
}

void add_sample(MetricAggregate& agg, const MetricValue& v) {
  if (v.defined) {
    agg.value += v.value;
    ++agg.n_defined;
  } else {
    ++agg.n_undefined;
  }
}

void finish_mean(MetricAggregate& agg) {
  if (agg.n_defined > 0) {
    agg.value /= agg.n_defined;
    agg.defined = true;
  } else {
    agg.value = 0.0;
  }
}

// The F1 aggregate keeps per-sample undefined counts but takes its value
// from the aggregated pr/re.
void finish_f1(MetricAggregate& f1, const MetricAggregate& pr, const MetricAggregate& re) {
  if (pr.defined && re.defined) {
    const double denom = pr.value + re.value;
    f1.value = denom > 0.0 ? 2.0 * pr.value * re.value / denom : 0.0;
    f1.defined = true;
  } else {
    f1.value = 0.0;
    f1.defined = false;
  }
}

nlohmann::json value_json(const MetricValue& v) {
  if (!v.defined) return nullptr;
  return v.value;
}

nlohmann::json aggregate_json(const MetricAggregate& a) {
  nlohmann::json j;
  j["value"] = a.defined ? nlohmann::json(a.value) : nlohmann::json(nullptr);
  j["n_defined"] = a.n_defined;
  j["n_undefined"] = a.n_undefined;
  return j;
}

std::string cell(const MetricAggregate& a) {
  if (!a.defined) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", a.value);
  return buf;
}

}  // namespace

MetricValue defined_value(double v) { return {v, true}; }

MatchingSet match_greedy_iou(const Layout& pred, const Layout& gt) {
  std::vector<std::tuple<double, int, int>> cands;
  for (int i = 0; i < static_cast<int>(pred.size()); ++i) {
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      if (pred.objects[i].category != gt.objects[j].category) continue;
      const double overlap = iou(pred.objects[i].box, gt.objects[j].box);
      if (overlap > 0.0) cands.emplace_back(-overlap, i, j);
    }
  }
  return greedy_select(std::move(cands), static_cast<int>(pred.size()),
                       static_cast<int>(gt.size()));
}

MatchingSet match_greedy_dist(const Layout& pred, const Layout& gt) {
  std::vector<std::tuple<double, int, int>> cands;
  for (int i = 0; i < static_cast<int>(pred.size()); ++i) {
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      if (pred.objects[i].category != gt.objects[j].category) continue;
      cands.emplace_back(center_distance(pred.objects[i].box, gt.objects[j].box), i, j);
    }
  }
  return greedy_select(std::move(cands), static_cast<int>(pred.size()),
                       static_cast<int>(gt.size()));
}

PRF f1_labels(const Layout& pred, const Layout& gt) {
  const int inter = multiset_overlap(label_counts(pred), label_counts(gt));
  PRF out;
  if (!pred.empty()) out.pr = defined_value(static_cast<double>(inter) / pred.size());
  if (!gt.empty()) out.re = defined_value(static_cast<double>(inter) / gt.size());
  out.f1 = combine_f1(out.pr, out.re);
  return out;
}

PRF f1_iou05(const Layout& pred, const Layout& gt) {
  int tp = 0;
  for (const MatchPair& p : match_greedy_iou(pred, gt)) {
    if (iou(pred.objects[p.pred].box, gt.objects[p.gt].box) >= 0.5) ++tp;
  }
  PRF out;
  if (!pred.empty()) out.pr = defined_value(static_cast<double>(tp) / pred.size());
  if (!gt.empty()) out.re = defined_value(static_cast<double>(tp) / gt.size());
  out.f1 = combine_f1(out.pr, out.re);
  return out;
}

PRF f1_dpw(const Layout& pred, const Layout& gt) {
  check_centers_normalized(pred, "pred");
  check_centers_normalized(gt, "gt");
  const MatchingSet pairs = match_greedy_dist(pred, gt);

  double total = 0.0;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (size_t a = 0; a < pairs.size(); ++a) {
    for (size_t b = 0; b < pairs.size(); ++b) {
      if (a == b) continue;
      const double d_pred = center_distance(pred.objects[pairs[a].pred].box,
                                            pred.objects[pairs[b].pred].box);
      const double d_gt =
          center_distance(gt.objects[pairs[a].gt].box, gt.objects[pairs[b].gt].box);
      total += 1.0 - inv_sqrt2 * std::abs(d_gt - d_pred);
    }
  }

  const int n_pred = static_cast<int>(pred.size());
  const int n_gt = static_cast<int>(gt.size());
  PRF out;
  if (n_pred >= 2) out.pr = defined_value(total / (n_pred * (n_pred - 1)));
  if (n_gt >= 2) out.re = defined_value(total / (n_gt * (n_gt - 1)));
  out.f1 = combine_f1(out.pr, out.re);
  return out;
}

MetricValue recall_replaced(const Layout& pred, const Layout& gt) {
  std::map<int, int> flagged;
  int n_flagged = 0;
  for (const LayoutObject& o : gt.objects) {
    if (o.replaced) {
      ++flagged[o.category];
      ++n_flagged;
    }
  }
  if (n_flagged == 0) return undefined_value();
  const int inter = multiset_overlap(flagged, label_counts(pred));
  return defined_value(static_cast<double>(inter) / n_flagged);
}

SampleMetrics evaluate_sample(const Layout& pred, const Layout& gt) {
  SampleMetrics s;
  const PRF lab = f1_labels(pred, gt);
  s.pr = lab.pr;
  s.re = lab.re;
  s.f1 = lab.f1;
  const PRF box = f1_iou05(pred, gt);
  s.pr05 = box.pr;
  s.re05 = box.re;
  s.f105 = box.f1;
  const PRF dpw = f1_dpw(pred, gt);
  s.pr_dpw = dpw.pr;
  s.re_dpw = dpw.re;
  s.f1_dpw = dpw.f1;
  s.re_repl = recall_replaced(pred, gt);
  return s;
}

MetricReport aggregate(const std::vector<SampleMetrics>& samples) {
  check_arg(!samples.empty(), "aggregate: no samples");
  MetricReport r;
  r.samples = samples;
  for (const SampleMetrics& s : samples) {
    add_sample(r.pr, s.pr);
    add_sample(r.re, s.re);
    add_sample(r.f1, s.f1);
    add_sample(r.pr05, s.pr05);
    add_sample(r.re05, s.re05);
    add_sample(r.f105, s.f105);
    add_sample(r.pr_dpw, s.pr_dpw);
    add_sample(r.re_dpw, s.re_dpw);
    add_sample(r.f1_dpw, s.f1_dpw);
    add_sample(r.re_repl, s.re_repl);
  }
  finish_mean(r.pr);
  finish_mean(r.re);
  finish_mean(r.pr05);
  finish_mean(r.re05);
  finish_mean(r.pr_dpw);
  finish_mean(r.re_dpw);
  finish_mean(r.re_repl);
  finish_f1(r.f1, r.pr, r.re);
  finish_f1(r.f105, r.pr05, r.re05);
  finish_f1(r.f1_dpw, r.pr_dpw, r.re_dpw);
  return r;
}

std::string to_json(const MetricReport& report) {
  nlohmann::json j;
  j["n_samples"] = report.samples.size();
  j["aggregate"] = {
      {"pr", aggregate_json(report.pr)},         {"re", aggregate_json(report.re)},
      {"f1", aggregate_json(report.f1)},         {"pr05", aggregate_json(report.pr05)},
      {"re05", aggregate_json(report.re05)},     {"f105", aggregate_json(report.f105)},
      {"pr_dpw", aggregate_json(report.pr_dpw)}, {"re_dpw", aggregate_json(report.re_dpw)},
      {"f1_dpw", aggregate_json(report.f1_dpw)}, {"re_repl", aggregate_json(report.re_repl)},
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const SampleMetrics& s : report.samples) {
    rows.push_back({
        {"pr", value_json(s.pr)},         {"re", value_json(s.re)},
        {"f1", value_json(s.f1)},         {"pr05", value_json(s.pr05)},
        {"re05", value_json(s.re05)},     {"f105", value_json(s.f105)},
        {"pr_dpw", value_json(s.pr_dpw)}, {"re_dpw", value_json(s.re_dpw)},
        {"f1_dpw", value_json(s.f1_dpw)}, {"re_repl", value_json(s.re_repl)},
    });
  }
  j["samples"] = rows;
  return j.dump(2);
}

std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  size_t name_w = 5;
  for (const auto& [name, report] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream out;
  out << std::left;
  out.width(static_cast<std::streamsize>(name_w + 2));
  out << "model";
  for (const char* col : {"F1_0.5", "F1", "F1_Dpw", "Re_repl"}) {
    out.width(9);
    out << col;
  }
  out << "\n";
  for (const auto& [name, report] : rows) {
    out.width(static_cast<std::streamsize>(name_w + 2));
    out << name;
    for (const MetricAggregate* a : {&report.f105, &report.f1, &report.f1_dpw,
                                     &report.re_repl}) {
      out.width(9);
      out << cell(*a);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace layoutlab
