#include "cwhar/container.h"

#include <bit>
#include <cstring>

#include "cwhar/errors.h"

namespace cwhar {

namespace fs = std::filesystem;

std::string blob_type_name(BlobType t) { return t == BlobType::f32 ? "f32" : "f64"; }

std::size_t blob_type_size(BlobType t) { return t == BlobType::f32 ? 4 : 8; }

BlobType parse_blob_type(const std::string& name) {
  if (name == "f32") return BlobType::f32;
  if (name == "f64") return BlobType::f64;
  throw FormatError("unsupported dtype '" + name + "'");
}

nlohmann::json BlobRef::to_json() const {
  return {{"shape", shape},
          {"dtype", blob_type_name(dtype)},
          {"file", file},
          {"byte_offset", byte_offset},
          {"byte_length", byte_length}};
}

BlobRef BlobRef::from_json(const nlohmann::json& j) {
  try {
    BlobRef ref;
    ref.shape = j.at("shape").get<Shape>();
    ref.dtype = parse_blob_type(j.at("dtype").get<std::string>());
    ref.file = j.at("file").get<std::string>();
    ref.byte_offset = j.at("byte_offset").get<std::uint64_t>();
    ref.byte_length = j.at("byte_length").get<std::uint64_t>();
    return ref;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed blob reference: ") + e.what());
  }
}

namespace {

template <typename UInt>
void put_le(std::vector<unsigned char>& out, UInt bits) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

template <typename UInt>
UInt get_le(const unsigned char* p) {
  UInt bits = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) bits |= static_cast<UInt>(p[b]) << (8 * b);
  return bits;
}

}  // namespace

BlobWriter::BlobWriter(const fs::path& dir, std::string file_name) : file_name_(std::move(file_name)) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  out_.open(dir / file_name_, std::ios::binary | std::ios::trunc);
  if (!out_) throw FormatError("cannot open " + (dir / file_name_).string() + " for writing");
}

BlobRef BlobWriter::append(std::span<const float> values, const Shape& shape) {
  if (shape_numel(shape) != values.size()) throw ShapeError("blob shape does not match value count");
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 4);
  for (float v : values) put_le(bytes, std::bit_cast<std::uint32_t>(v));
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out_) throw FormatError("write failed for " + file_name_);
  BlobRef ref{shape, BlobType::f32, file_name_, offset_, bytes.size()};
  offset_ += bytes.size();
  return ref;
}

BlobRef BlobWriter::append(std::span<const double> values, const Shape& shape) {
  if (shape_numel(shape) != values.size()) throw ShapeError("blob shape does not match value count");
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) put_le(bytes, std::bit_cast<std::uint64_t>(v));
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out_) throw FormatError("write failed for " + file_name_);
  BlobRef ref{shape, BlobType::f64, file_name_, offset_, bytes.size()};
  offset_ += bytes.size();
  return ref;
}

void BlobWriter::close() {
  out_.close();
  if (out_.fail()) throw FormatError("closing " + file_name_ + " failed");
}

BlobReader::BlobReader(fs::path dir) : dir_(std::move(dir)) {}

std::vector<unsigned char> BlobReader::read_bytes(const BlobRef& ref, BlobType expected,
                                                  const std::string& context) const {
  if (ref.dtype != expected) {
    throw FormatError(context + ": dtype " + blob_type_name(ref.dtype) + ", expected " + blob_type_name(expected));
  }
  const std::uint64_t want = shape_numel(ref.shape) * blob_type_size(ref.dtype);
  if (ref.byte_length != want) {
    throw FormatError(context + ": byte_length " + std::to_string(ref.byte_length) + " does not match shape " +
                      shape_str(ref.shape) + " (" + std::to_string(want) + " bytes)");
  }
  if (ref.file.find("..") != std::string::npos || fs::path(ref.file).is_absolute()) {
    throw FormatError(context + ": blob file must be relative to the container");
  }
  const fs::path path = dir_ / ref.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(context + ": cannot open blob " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  if (ref.byte_offset + ref.byte_length > size) {
    throw FormatError(context + ": blob truncated (needs bytes up to " +
                      std::to_string(ref.byte_offset + ref.byte_length) + ", file has " + std::to_string(size) + ")");
  }
  std::vector<unsigned char> bytes(ref.byte_length);
  in.seekg(static_cast<std::streamoff>(ref.byte_offset));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError(context + ": read failed");
  return bytes;
}

std::vector<float> BlobReader::read_f32(const BlobRef& ref, const std::string& context) const {
  const auto bytes = read_bytes(ref, BlobType::f32, context);
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(&bytes[i * 4]));
  return out;
}

std::vector<double> BlobReader::read_f64(const BlobRef& ref, const std::string& context) const {
  const auto bytes = read_bytes(ref, BlobType::f64, context);
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_le<std::uint64_t>(&bytes[i * 8]));
  return out;
}

std::vector<double> BlobReader::read_as_double(const BlobRef& ref, const std::string& context) const {
  if (ref.dtype == BlobType::f64) return read_f64(ref, context);
  const auto f = read_f32(ref, context);
  return {f.begin(), f.end()};
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cwhar
