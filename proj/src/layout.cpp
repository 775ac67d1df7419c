#include "layoutlab/layout.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace layoutlab {

CategoryVocab::CategoryVocab(std::vector<CategoryInfo> cats) : cats_(std::move(cats)) {
  for (int i = 0; i < static_cast<int>(cats_.size()); ++i) {
    if (!index_.emplace(cats_[i].name, i).second) {
      throw std::invalid_argument("duplicate category name: " + cats_[i].name);
    }
  }
}

int CategoryVocab::id(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

const std::string& CategoryVocab::name(int id) const {
  return cats_.at(static_cast<size_t>(id)).name;
}

const std::string& CategoryVocab::supercategory(int id) const {
  return cats_.at(static_cast<size_t>(id)).supercategory;
}

std::vector<int> order_by_area_desc(const Layout& layout) {
  std::vector<int> idx(layout.objects.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const LayoutObject& oa = layout.objects[a];
    const LayoutObject& ob = layout.objects[b];
    return std::make_tuple(-oa.box.area(), oa.category, oa.box.x, oa.box.y) <
           std::make_tuple(-ob.box.area(), ob.category, ob.box.x, ob.box.y);
  });
  return idx;
}

Layout reorder(const Layout& layout, const std::vector<int>& order) {
  Layout out;
  out.objects.reserve(order.size());
  for (int i : order) out.objects.push_back(layout.objects.at(static_cast<size_t>(i)));
  return out;
}

}  // namespace layoutlab
