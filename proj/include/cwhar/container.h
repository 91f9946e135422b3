#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwhar/tensor.h"

namespace cwhar {

// On-disk envelope shared by datasets and checkpoints: a directory holding
// manifest.json plus raw little-endian row-major blobs. Each manifest entry
// points into a blob with {shape, dtype, file, byte_offset, byte_length}.

inline constexpr int kContainerFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

enum class BlobType { f32, f64 };

std::string blob_type_name(BlobType t);
std::size_t blob_type_size(BlobType t);
BlobType parse_blob_type(const std::string& name);

struct BlobRef {
  Shape shape;
  BlobType dtype = BlobType::f32;
  std::string file;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;

  nlohmann::json to_json() const;
  static BlobRef from_json(const nlohmann::json& j);
};

/// Appends blobs to a single file in the container directory.
class BlobWriter {
 public:
  BlobWriter(const std::filesystem::path& dir, std::string file_name);

  BlobRef append(std::span<const float> values, const Shape& shape);
  BlobRef append(std::span<const double> values, const Shape& shape);
  void close();

 private:
  std::string file_name_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

/// Reads blobs back, checking byte lengths against shapes and file bounds.
/// Failures throw FormatError prefixed with `context`.
class BlobReader {
 public:
  explicit BlobReader(std::filesystem::path dir);

  std::vector<float> read_f32(const BlobRef& ref, const std::string& context) const;
  std::vector<double> read_f64(const BlobRef& ref, const std::string& context) const;
  // Reads either dtype, widening f32 to double.
  std::vector<double> read_as_double(const BlobRef& ref, const std::string& context) const;

 private:
  std::vector<unsigned char> read_bytes(const BlobRef& ref, BlobType expected, const std::string& context) const;
  std::filesystem::path dir_;
};

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace cwhar
