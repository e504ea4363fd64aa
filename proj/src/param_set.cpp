// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/param_set.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "ticketlab/errors.hpp"
#include "ticketlab/numerics.hpp"

namespace ticketlab {

Tensor& ParamSet::add(std::string name, std::vector<std::size_t> shape) {
  TICKETLAB_REQUIRE(!name.empty(), "ParamSet::add: empty tensor name");
  TICKETLAB_REQUIRE(!has(name), "ParamSet::add: duplicate tensor name '" + name + "'");
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  tensors_.push_back(Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return tensors_.back();
}

void ParamSet::tie(std::string source, std::string alias) {
  TICKETLAB_REQUIRE(has(source) && !is_alias(source), "ParamSet::tie: unknown source '" + source + "'");
  TICKETLAB_REQUIRE(!has(alias), "ParamSet::tie: alias name already in use '" + alias + "'");
  tied_.push_back(TiedPair{std::move(source), std::move(alias)});
}

bool ParamSet::has(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const Tensor& t) { return t.name == name; }) ||
         is_alias(name);
}

bool ParamSet::is_alias(std::string_view name) const {
  return std::any_of(tied_.begin(), tied_.end(), [&](const TiedPair& p) { return p.alias == name; });
}

std::size_t ParamSet::index_of(std::string_view name) const {
  std::string_view resolved = name;
  for (const auto& p : tied_)
    if (p.alias == name) resolved = p.source;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == resolved) return i;
  detail::contract_fail("ParamSet: no tensor named '" + std::string(name) + "'");
}

std::size_t ParamSet::total_params() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::vector<std::size_t> ParamSet::offsets() const {
  std::vector<std::size_t> out;
  out.reserve(tensors_.size());
  std::size_t at = 0;
  for (const auto& t : tensors_) {
    out.push_back(at);
    at += t.size();
  }
  return out;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_params());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void ParamSet::assign_flat(std::span<const double> flat) {
  TICKETLAB_REQUIRE(flat.size() == total_params(), "ParamSet::assign_flat: length mismatch");
  std::size_t at = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), t.size(), t.values.begin());
    at += t.size();
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out = *this;
  out.fill(0.0);
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (tensors_.size() != other.tensors_.size() || tied_ != other.tied_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) return false;
  return true;
}

void ParamSet::fill(double value) {
  for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), value);
}

void ParamSet::axpy(double scale, const ParamSet& other) {
  TICKETLAB_REQUIRE(same_layout(other), "ParamSet::axpy: layout mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = tensors_[i].values;
    const auto& src = other.tensors_[i].values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_)
    for (double x : t.values)
      if (!std::isfinite(x)) return false;
  return true;
}

double ParamSet::norm() const {
  const auto flat = flatten();
  return numerics::norm2(flat);
}

std::string layer_of(std::string_view tensor_name) {
  return std::string(tensor_name.substr(0, tensor_name.find('.')));
}

// ---------------------------------------------------------------------------
// Checkpoint encoding

namespace {

constexpr char kMagic[8] = {'T', 'L', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[at_ + i]) << (8 * i));
    at_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (at_ + n > bytes_.size()) throw ConfigError("checkpoint: truncated file");
  }
  bool done() const { return at_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, std::string_view metadata) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_string(out, metadata);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    put_string(out, t.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) put_le<std::uint64_t>(out, dim);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.tied_pairs().size()));
  for (const auto& p : params.tied_pairs()) {
    put_string(out, p.source);
    put_string(out, p.alias);
  }
  for (const auto& t : params.tensors())
    for (double x : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes, std::string* metadata) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("checkpoint: bad magic");
  Reader r(bytes.subspan(sizeof(kMagic)));
  std::string meta = r.get_string();
  if (metadata) *metadata = meta;

  ParamSet params;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto ndim = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    params.add(std::move(name), std::move(shape));
  }
  const auto ties = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < ties; ++i) {
    std::string source = r.get_string();
    std::string alias = r.get_string();
    params.tie(std::move(source), std::move(alias));
  }
  for (auto& t : params.tensors())
    for (double& x : t.values) x = std::bit_cast<double>(r.get<std::uint64_t>());
  if (!r.done()) throw ConfigError("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::string_view metadata) {
  const auto bytes = encode_checkpoint(params, metadata);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParamSet load_checkpoint(const std::filesystem::path& path, std::string* metadata) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, metadata);
}

}  // namespace ticketlab
