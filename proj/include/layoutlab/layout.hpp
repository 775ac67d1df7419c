#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "layoutlab/geometry.hpp"

namespace layoutlab {

struct CategoryInfo {
  std::string name;
  std::string supercategory;
};

// Dense category id space (0..size-1) with name and supercategory lookup.
class CategoryVocab {
 public:
  CategoryVocab() = default;
  explicit CategoryVocab(std::vector<CategoryInfo> cats);

  int id(const std::string& name) const;  // -1 when unknown
  const std::string& name(int id) const;
  const std::string& supercategory(int id) const;
  int size() const { return static_cast<int>(cats_.size()); }
  bool contains(const std::string& name) const { return id(name) >= 0; }

 private:
  std::vector<CategoryInfo> cats_;
  std::unordered_map<std::string, int> index_;
};

struct LayoutObject {
  int category = -1;
  BoundingBox box;
  bool replaced = false;  // marks substituted objects in unexpected data
};

struct Layout {
  std::vector<LayoutObject> objects;

  bool empty() const { return objects.empty(); }
  int size() const { return static_cast<int>(objects.size()); }
};

// Indices of objects sorted by descending box area; ties broken by
// (category, x, y) ascending so the order is a stable total order.
std::vector<int> order_by_area_desc(const Layout& layout);

Layout reorder(const Layout& layout, const std::vector<int>& order);

}  // namespace layoutlab
