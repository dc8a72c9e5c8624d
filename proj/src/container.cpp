#include "gazecontact/container.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <system_error>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"

namespace gc {
namespace {

constexpr char kMagic[4] = {'G', 'C', 'M', '1'};

template <class T>
void putLE(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class T>
T getLE(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) fail(ErrorKind::IoError, "model container truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[pos + i]) << (8 * i);
  pos += sizeof(T);
  return value;
}

}  // namespace

void ModelContainer::add(std::uint32_t tag, std::vector<double> values) {
  records_.push_back({tag, std::move(values)});
}

void ModelContainer::add(std::uint32_t tag, std::span<const double> values) {
  records_.push_back({tag, std::vector<double>(values.begin(), values.end())});
}

const ModelContainer::Record& ModelContainer::get(std::uint32_t tag) const {
  for (const auto& r : records_)
    if (r.tag == tag) return r;
  fail(ErrorKind::IoError, "model container: missing record with tag " + std::to_string(tag));
}

std::vector<const ModelContainer::Record*> ModelContainer::all(std::uint32_t tag) const {
  std::vector<const Record*> out;
  for (const auto& r : records_)
    if (r.tag == tag) out.push_back(&r);
  return out;
}

bool ModelContainer::has(std::uint32_t tag) const {
  for (const auto& r : records_)
    if (r.tag == tag) return true;
  return false;
}

std::vector<std::uint8_t> ModelContainer::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  for (const auto& r : records_) {
    putLE<std::uint32_t>(out, r.tag);
    putLE<std::uint64_t>(out, static_cast<std::uint64_t>(r.values.size()) * 8);
    for (double v : r.values) putLE<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ModelContainer ModelContainer::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::IoError, "not a model container (bad magic)");
  ModelContainer c;
  std::size_t pos = 4;
  while (pos < bytes.size()) {
    const auto tag = getLE<std::uint32_t>(bytes, pos);
    const auto len = getLE<std::uint64_t>(bytes, pos);
    if (len % 8 != 0 || len > bytes.size() - pos) fail(ErrorKind::IoError, "model container: bad payload length");
    Record r{tag, {}};
    r.values.resize(len / 8);
    for (auto& v : r.values) v = std::bit_cast<double>(getLE<std::uint64_t>(bytes, pos));
    c.records_.push_back(std::move(r));
  }
  return c;
}

void ModelContainer::save(const std::filesystem::path& path) const {
  auto bytes = encode();
  atomicWrite(path, bytes);
}

ModelContainer ModelContainer::load(const std::filesystem::path& path) { return decode(readBytes(path)); }

std::uint64_t contentHash(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double PayloadReader::real() {
  if (pos_ >= values_.size()) fail(ErrorKind::IoError, "model payload truncated");
  return values_[pos_++];
}

std::int64_t PayloadReader::integer() {
  double v = real();
  if (v != std::floor(v)) fail(ErrorKind::IoError, "model payload: expected integer field");
  return static_cast<std::int64_t>(v);
}

std::size_t PayloadReader::count() {
  auto v = integer();
  if (v < 0) fail(ErrorKind::IoError, "model payload: negative count");
  return static_cast<std::size_t>(v);
}

std::vector<double> PayloadReader::reals(std::size_t n) {
  if (pos_ + n > values_.size()) fail(ErrorKind::IoError, "model payload truncated");
  std::vector<double> out(values_.begin() + static_cast<std::ptrdiff_t>(pos_),
                          values_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

void appendMatrix(std::vector<double>& out, const Matrix& m) {
  out.push_back(static_cast<double>(m.rows()));
  out.push_back(static_cast<double>(m.cols()));
  out.insert(out.end(), m.data().begin(), m.data().end());
}

Matrix readMatrix(PayloadReader& in) {
  const auto rows = in.count();
  const auto cols = in.count();
  Matrix m(rows, cols);
  m.data() = in.reals(rows * cols);
  return m;
}

// ---------------------------------------------------------------------------

void atomicWrite(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) fail(ErrorKind::IoError, "output directory does not exist: " + parent.string());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::IoError, "rename failed for " + path.string() + ": " + ec.message());
}

void atomicWrite(const std::filesystem::path& path, std::string_view text) {
  atomicWrite(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> readBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string readText(const std::filesystem::path& path) {
  auto bytes = readBytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<std::string> splitCsvLine(std::string_view line) {
  std::vector<std::string> fields;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string formatReal(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace gc
