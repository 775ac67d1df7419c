#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "layoutlab/nn.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

// Binary container: consecutive records, each u32 rows + u32 cols followed by
// the row-major little-endian payload. One dtype per container, declared in
// the JSON index: {"dtype": "f32"|"f64", "records": {name: byte_offset},
// "meta": {...}}. float32 is the interchange format for cached embeddings;
// training checkpoints use float64 so a resumed run continues exactly.
enum class BlobDtype { f32, f64 };

void write_blob_container(const std::string& blob_path, const std::string& index_path,
                          const std::vector<std::pair<std::string, Mat>>& records,
                          BlobDtype dtype, const nlohmann::json& meta = nlohmann::json());

class BlobContainer {
 public:
  static BlobContainer load(const std::string& blob_path, const std::string& index_path);

  std::vector<std::string> names() const;
  bool has(const std::string& name) const;
  Mat get(const std::string& name) const;
  const nlohmann::json& meta() const { return meta_; }
  BlobDtype dtype() const { return dtype_; }

 private:
  std::string blob_;  // raw bytes, held in memory
  std::vector<std::pair<std::string, uint64_t>> offsets_;
  nlohmann::json meta_;
  BlobDtype dtype_ = BlobDtype::f32;
};

// Checkpoint = <prefix>.bin + <prefix>.json holding every parameter tensor,
// Adam moments when an optimizer is given, and caller metadata (epoch, seed,
// config echo). Loading restores values in place and validates shapes.
void save_checkpoint(const std::string& prefix, const ParamSet& params, const Adam* opt,
                     const nlohmann::json& meta);
nlohmann::json load_checkpoint(const std::string& prefix, ParamSet& params, Adam* opt);

}  // namespace layoutlab
