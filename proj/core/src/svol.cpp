#include "fmriagg/svol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fmriagg/error.hpp"

namespace fmriagg {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace

std::size_t SvolHeader::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<std::uint8_t> encode_svol(const SvolHeader& header, const std::vector<double>& values) {
  if (values.size() != header.element_count()) throw InvalidInput("SVOL1 payload size does not match dims");
  nlohmann::ordered_json j;
  j["dims"] = {header.dims[0], header.dims[1], header.dims[2], header.dims[3]};
  j["dtype"] = header.dtype == Dtype::f32 ? "f32" : "f64";
  j["order"] = "xyzt";
  j["endian"] = "little";
  const std::string text = j.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kSvolMagicSize + 4 + text.size() + values.size() * header.element_size());
  out.insert(out.end(), kSvolMagic, kSvolMagic + kSvolMagicSize);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("SVOL1 writer refuses non-finite data");
    if (header.dtype == Dtype::f32) {
      put_le<float>(out, static_cast<float>(v));
    } else {
      put_le<double>(out, v);
    }
  }
  return out;
}

std::pair<SvolHeader, std::vector<double>> decode_svol(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kSvolMagicSize) throw FormatError("SVOL1: file shorter than magic", bytes.size());
  if (std::memcmp(bytes.data(), kSvolMagic, kSvolMagicSize) != 0) throw FormatError("SVOL1: bad magic", 0);
  std::size_t pos = kSvolMagicSize;
  if (bytes.size() < pos + 4) throw FormatError("SVOL1: truncated header length", bytes.size());
  const auto hlen = get_le<std::uint32_t>(bytes.data() + pos);
  pos += 4;
  if (bytes.size() < pos + hlen) throw FormatError("SVOL1: truncated JSON header", bytes.size());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("SVOL1: header is not JSON: ") + e.what(), pos + e.byte);
  }

  SvolHeader h;
  try {
    const auto& dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 4) throw FormatError("SVOL1: dims must have 4 entries", pos);
    for (int i = 0; i < 4; ++i) {
      h.dims[i] = dims[i].get<std::int64_t>();
      if (h.dims[i] < 1) throw FormatError("SVOL1: dims must be >= 1", pos);
    }
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32") {
      h.dtype = Dtype::f32;
    } else if (dtype == "f64") {
      h.dtype = Dtype::f64;
    } else {
      throw FormatError("SVOL1: unsupported dtype '" + dtype + "'", pos);
    }
    if (j.at("order").get<std::string>() != "xyzt") throw FormatError("SVOL1: order must be xyzt", pos);
    if (j.at("endian").get<std::string>() != "little") throw FormatError("SVOL1: endian must be little", pos);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("SVOL1: malformed header: ") + e.what(), pos);
  }
  pos += hlen;

  const std::size_t need = h.element_count() * h.element_size();
  const std::size_t have = bytes.size() - pos;
  if (have < need) throw FormatError("SVOL1: truncated payload", bytes.size());
  if (have > need) throw FormatError("SVOL1: payload longer than declared dims", pos + need);

  std::vector<double> values(h.element_count());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint8_t* p = bytes.data() + pos + i * h.element_size();
    values[i] = h.dtype == Dtype::f32 ? static_cast<double>(get_le<float>(p)) : get_le<double>(p);
  }
  return {h, std::move(values)};
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_volume(const Volume4D& vol, const std::filesystem::path& path, Dtype dtype) {
  SvolHeader h;
  h.dims[0] = vol.dims().x;
  h.dims[1] = vol.dims().y;
  h.dims[2] = vol.dims().z;
  h.dims[3] = vol.trs();
  h.dtype = dtype;
  const auto data = vol.data();
  write_file_bytes(path, encode_svol(h, {data.begin(), data.end()}));
}

Volume4D read_volume(const std::filesystem::path& path) {
  auto [h, values] = decode_svol(read_file_bytes(path));
  return {Dims3{static_cast<int>(h.dims[0]), static_cast<int>(h.dims[1]), static_cast<int>(h.dims[2])},
          static_cast<int>(h.dims[3]), std::move(values)};
}

void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path, Dtype dtype) {
  SvolHeader h;
  h.dims[0] = m.rows();
  h.dims[1] = m.cols();
  h.dtype = dtype;
  write_file_bytes(path, encode_svol(h, {m.data(), m.data() + m.size()}));
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  auto [h, values] = decode_svol(read_file_bytes(path));
  if (h.dims[2] != 1 || h.dims[3] != 1) throw FormatError("SVOL1: matrix file must have dims [r,c,1,1]", 9);
  return Eigen::Map<Eigen::MatrixXd>(values.data(), h.dims[0], h.dims[1]);
}

void write_mask(const BrainMask& mask, const std::filesystem::path& path) {
  const auto flags = mask.flags();
  std::vector<double> values(flags.begin(), flags.end());
  write_volume(Volume4D(mask.dims(), 1, std::move(values)), path, Dtype::f32);
}

BrainMask read_mask(const std::filesystem::path& path) { return BrainMask::from_volume(read_volume(path)); }

}  // namespace fmriagg
