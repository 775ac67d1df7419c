#include "layoutlab/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "layoutlab/check.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payloads are written as raw little-endian bytes");

namespace layoutlab {

namespace {

template <typename T>
void append_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_raw(const std::string& bytes, size_t at) {
  check_arg(at + sizeof(T) <= bytes.size(), "blob: truncated record");
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

std::string dtype_name(BlobDtype d) { return d == BlobDtype::f32 ? "f32" : "f64"; }

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check_arg(f.good(), "cannot open for write: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  check_arg(f.good(), "write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_arg(f.good(), "cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

void write_blob_container(const std::string& blob_path, const std::string& index_path,
                          const std::vector<std::pair<std::string, Mat>>& records,
                          BlobDtype dtype, const nlohmann::json& meta) {
  std::string bytes;
  nlohmann::json offsets = nlohmann::json::object();
  for (const auto& [name, m] : records) {
    check_arg(!offsets.contains(name), "blob: duplicate record " + name);
    offsets[name] = bytes.size();
    append_raw<uint32_t>(bytes, static_cast<uint32_t>(m.rows()));
    append_raw<uint32_t>(bytes, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (dtype == BlobDtype::f32)
          append_raw<float>(bytes, static_cast<float>(m(i, j)));
        else
          append_raw<double>(bytes, m(i, j));
      }
  }
  write_file(blob_path, bytes);

  nlohmann::json index;
  index["dtype"] = dtype_name(dtype);
  index["records"] = std::move(offsets);
  if (!meta.is_null()) index["meta"] = meta;
  write_file(index_path, index.dump(2) + "\n");
}

BlobContainer BlobContainer::load(const std::string& blob_path,
                                  const std::string& index_path) {
  BlobContainer c;
  c.blob_ = read_file(blob_path);
  nlohmann::json index = nlohmann::json::parse(read_file(index_path));
  std::string dt = index.at("dtype").get<std::string>();
  check_arg(dt == "f32" || dt == "f64", "blob: unknown dtype " + dt);
  c.dtype_ = dt == "f32" ? BlobDtype::f32 : BlobDtype::f64;
  for (const auto& [name, off] : index.at("records").items())
    c.offsets_.emplace_back(name, off.get<uint64_t>());
  if (index.contains("meta")) c.meta_ = index["meta"];
  return c;
}

std::vector<std::string> BlobContainer::names() const {
  std::vector<std::string> out;
  out.reserve(offsets_.size());
  for (const auto& [name, off] : offsets_) out.push_back(name);
  return out;
}

bool BlobContainer::has(const std::string& name) const {
  for (const auto& [n, off] : offsets_)
    if (n == name) return true;
  return false;
}

Mat BlobContainer::get(const std::string& name) const {
  for (const auto& [n, off] : offsets_) {
    if (n != name) continue;
    size_t at = off;
    uint32_t rows = read_raw<uint32_t>(blob_, at);
    uint32_t cols = read_raw<uint32_t>(blob_, at + 4);
    at += 8;
    uint64_t elt = dtype_ == BlobDtype::f32 ? 4 : 8;
    uint64_t need = static_cast<uint64_t>(rows) * cols * elt;
    check_arg(at + need <= blob_.size(), "blob: record " + name + " overruns container");
    Mat m(rows, cols);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) {
        if (dtype_ == BlobDtype::f32) {
          m(i, j) = read_raw<float>(blob_, at);
          at += 4;
        } else {
          m(i, j) = read_raw<double>(blob_, at);
          at += 8;
        }
      }
    return m;
  }
  throw std::invalid_argument("blob: no record named " + name);
}

void save_checkpoint(const std::string& prefix, const ParamSet& params, const Adam* opt,
                     const nlohmann::json& meta) {
  std::vector<std::pair<std::string, Mat>> records;
  for (const auto& [name, p] : params.entries()) records.emplace_back(name, p.value());
  nlohmann::json full = meta.is_null() ? nlohmann::json::object() : meta;
  if (opt != nullptr) {
    check_arg(opt->m_state().size() == params.tensor_count(),
              "checkpoint: optimizer state does not cover all parameters");
    for (size_t i = 0; i < params.tensor_count(); ++i) {
      const std::string& name = params.entries()[i].first;
      records.emplace_back("adam.m." + name, opt->m_state()[i]);
      records.emplace_back("adam.v." + name, opt->v_state()[i]);
    }
    full["adam_t"] = opt->t();
  }
  write_blob_container(prefix + ".bin", prefix + ".json", records, BlobDtype::f64, full);
}

nlohmann::json load_checkpoint(const std::string& prefix, ParamSet& params, Adam* opt) {
  BlobContainer c = BlobContainer::load(prefix + ".bin", prefix + ".json");
  check_arg(c.dtype() == BlobDtype::f64, "checkpoint: expected f64 container");
  for (const auto& [name, p] : params.entries()) {
    Mat m = c.get(name);
    check_arg(m.rows() == p.rows() && m.cols() == p.cols(),
              "checkpoint: shape mismatch for " + name);
    Var shared = p;
    shared.raw_value() = m;
  }
  if (opt != nullptr) {
    opt->m_state().clear();
    opt->v_state().clear();
    for (const auto& [name, p] : params.entries()) {
      opt->m_state().push_back(c.get("adam.m." + name));
      opt->v_state().push_back(c.get("adam.v." + name));
    }
    check_arg(c.meta().contains("adam_t"), "checkpoint: missing optimizer step count");
    opt->set_t(c.meta()["adam_t"].get<int64_t>());
  }
  return c.meta();
}

}  // namespace layoutlab
