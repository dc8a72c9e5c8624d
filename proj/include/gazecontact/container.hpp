#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gazecontact/numerics.hpp"

namespace gc {

/// Flat binary model container shared by every serialized model:
///
///   "GCM1"
///   repeated { u32 tag, u64 payload_bytes, payload_bytes / 8 x f64 }
///
/// All integers and doubles are little-endian. Integers stored inside a
/// payload are encoded as exactly representable doubles.
class ModelContainer {
 public:
  struct Record {
    std::uint32_t tag = 0;
    std::vector<double> values;
  };

  void add(std::uint32_t tag, std::vector<double> values);
  void add(std::uint32_t tag, std::span<const double> values);

  const std::vector<Record>& records() const noexcept { return records_; }
  /// First record with the tag; IoError if absent.
  const Record& get(std::uint32_t tag) const;
  std::vector<const Record*> all(std::uint32_t tag) const;
  bool has(std::uint32_t tag) const;

  std::vector<std::uint8_t> encode() const;
  static ModelContainer decode(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static ModelContainer load(const std::filesystem::path& path);

 private:
  std::vector<Record> records_;
};

/// Record tags used by the model files.
enum ModelTag : std::uint32_t {
  kTagMethod = 1,
  kTagGmm = 10,
  kTagForest = 11,
  kTagPca = 20,
  kTagMda = 21,
  kTagSvm = 22,
  kTagPicnnConfig = 30,
  kTagPicnnParams = 31,
};

/// FNV-1a over the encoded bytes; used to compare models across runs.
std::uint64_t contentHash(std::span<const std::uint8_t> bytes) noexcept;

// Reader for a payload laid out field by field.
class PayloadReader {
 public:
  explicit PayloadReader(std::span<const double> values) : values_(values) {}
  double real();
  std::int64_t integer();
  std::size_t count();
  std::vector<double> reals(std::size_t n);
  bool done() const noexcept { return pos_ == values_.size(); }

 private:
  std::span<const double> values_;
  std::size_t pos_ = 0;
};

void appendMatrix(std::vector<double>& out, const Matrix& m);
Matrix readMatrix(PayloadReader& in);

}  // namespace gc
