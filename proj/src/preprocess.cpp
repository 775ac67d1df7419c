#include "layoutlab/preprocess.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "layoutlab/check.hpp"

namespace layoutlab {

const CategoryStats& ClassStats::get(int category) const {
  auto it = by_category.find(category);
  check_arg(it != by_category.end(),
            "ClassStats: no entry for category " + std::to_string(category));
  return it->second;
}

namespace {

double max_diagonal(const Layout& l) {
  double d = 0.0;
  for (const auto& o : l.objects) d = std::max(d, o.box.diagonal());
  return d;
}

}  // namespace

ClassStats compute_class_stats(const std::vector<DatasetSample>& train) {
  check_arg(!train.empty(), "compute_class_stats: empty train set");

  // one layout per image; captions of the same image share it
  std::map<std::string, const Layout*> per_image;
  for (const auto& s : train) per_image.emplace(s.image_id, &s.layout);

  struct Acc {
    double diag_sum = 0.0, norm_sum = 0.0;
    int n = 0;
  };
  std::map<int, Acc> acc;
  for (const auto& [image_id, layout] : per_image) {
    double image_max = max_diagonal(*layout);
    if (image_max <= 0.0) continue;
    std::map<int, double> biggest;
    for (const auto& o : layout->objects) {
      double d = o.box.diagonal();
      auto [it, inserted] = biggest.emplace(o.category, d);
      if (!inserted) it->second = std::max(it->second, d);
    }
    for (const auto& [category, d] : biggest) {
      Acc& a = acc[category];
      a.diag_sum += d;
      a.norm_sum += d / image_max;
      a.n += 1;
    }
  }

  ClassStats stats;
  for (const auto& [category, a] : acc) {
    stats.by_category[category] =
        CategoryStats{a.diag_sum / a.n, a.norm_sum / a.n, a.n};
  }
  return stats;
}

Layout sp_filter(const Layout& l, const ClassStats& stats) {
  double image_max = max_diagonal(l);
  Layout out;
  for (const auto& o : l.objects) {
    auto it = stats.by_category.find(o.category);
    if (it == stats.by_category.end() || image_max <= 0.0) {
      out.objects.push_back(o);
      continue;
    }
    double d = o.box.diagonal();
    double norm = d / image_max;
    bool below_abs = d < 0.5 * it->second.avg_diag;
    bool below_norm = norm < 0.5 * it->second.avg_norm_diag;
    if (!(below_abs && below_norm)) out.objects.push_back(o);
  }
  return out;
}

Layout cpn_normalize(const Layout& l) {
  check_arg(!l.objects.empty(), "cpn_normalize: empty layout");
  double x_min = l.objects[0].box.x0(), x_max = l.objects[0].box.x1();
  double y_min = l.objects[0].box.y0(), y_max = l.objects[0].box.y1();
  for (const auto& o : l.objects) {
    x_min = std::min(x_min, o.box.x0());
    x_max = std::max(x_max, o.box.x1());
    y_min = std::min(y_min, o.box.y0());
    y_max = std::max(y_max, o.box.y1());
  }
  double w = x_max - x_min, h = y_max - y_min;
  double p = std::max(w, h);
  check_arg(p > 0.0, "cpn_normalize: layout has zero extent");
  double pad_x = 0.5 * (p - w), pad_y = 0.5 * (p - h);

  Layout out = l;
  for (auto& o : out.objects) {
    o.box.x = (o.box.x - x_min + pad_x) / p;
    o.box.y = (o.box.y - y_min + pad_y) / p;
    o.box.w /= p;
    o.box.h /= p;
  }
  return out;
}

Layout hflip(const Layout& l) {
  Layout out = l;
  for (auto& o : out.objects) o.box.x = 1.0 - o.box.x;
  return out;
}

}  // namespace layoutlab
