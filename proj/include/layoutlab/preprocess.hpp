#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "layoutlab/dataio.hpp"
#include "layoutlab/layout.hpp"

namespace layoutlab {

struct CategoryStats {
  double avg_diag = 0.0;       // mean over images of the biggest instance's diagonal
  double avg_norm_diag = 0.0;  // same, after dividing by the image's largest diagonal
  int count = 0;               // number of contributing images
};

struct ClassStats {
  std::unordered_map<int, CategoryStats> by_category;
  bool has(int category) const { return by_category.count(category) > 0; }
  const CategoryStats& get(int category) const;
};

// One contribution per (image, category): the biggest instance of that
// category in the image. Samples sharing an image id share its layout, so
// duplicate captions do not skew the averages.
ClassStats compute_class_stats(const std::vector<DatasetSample>& train);

// Small-object filter: an object is dropped only when its diagonal is below
// half the class average AND its within-layout normalized diagonal is below
// half the normalized class average. Categories without stats are never
// dropped.
Layout sp_filter(const Layout& l, const ClassStats& stats);

// Crop the tightest enclosing box, pad the short side symmetrically to a
// square of side P, divide by P. Aspect ratios survive exactly; the result
// spans [0,1] on the long axis.
Layout cpn_normalize(const Layout& l);

Layout hflip(const Layout& l);

}  // namespace layoutlab
