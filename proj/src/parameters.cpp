#include "dualkg/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dualkg {

void ParameterStore::add(const std::string& name, Tensor initial) {
  if (name.empty()) throw std::invalid_argument("ParameterStore::add: empty parameter name");
  if (contains(name)) throw std::invalid_argument("ParameterStore::add: duplicate parameter '" + name + "'");
  Slot slot;
  slot.first_moment = Tensor::zeros_like(initial);
  slot.second_moment = Tensor::zeros_like(initial);
  slot.value = std::move(initial);
  slots_.emplace(name, std::move(slot));
}

void ParameterStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(-bound, bound);
  add(name, std::move(t));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second.value;
}

void ParameterStore::set(const std::string& name, Tensor value) {
  Tensor& current = get(name);
  if (current.shape() != value.shape()) {
    throw ShapeError("ParameterStore::set('" + name + "'): shape " + shape_string(value.shape()) +
                     " does not match registered " + shape_string(current.shape()));
  }
  current = std::move(value);
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, slot] : slots_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, slot] : slots_) n += slot.value.numel();
  return n;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.slots_.size() != b.slots_.size()) return false;
  for (auto ia = a.slots_.begin(), ib = b.slots_.begin(); ia != a.slots_.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const auto& sa = ia->second;
    const auto& sb = ib->second;
    if (!(sa.value == sb.value) || !(sa.first_moment == sb.first_moment) || !(sa.second_moment == sb.second_moment) ||
        sa.step != sb.step) {
      return false;
    }
  }
  return true;
}

void adam_step(ParameterStore& params, const ad::GradientMap& grads, const AdamConfig& config) {
  for (auto& [name, slot] : params.slots()) {
    auto git = grads.find(name);
    const Tensor* grad = git == grads.end() ? nullptr : &git->second;
    if (grad && grad->shape() != slot.value.shape()) {
      throw ShapeError("adam_step('" + name + "'): gradient shape " + shape_string(grad->shape()) +
                       " vs parameter " + shape_string(slot.value.shape()));
    }
    ++slot.step;
    const double t = static_cast<double>(slot.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    auto value = slot.value.data();
    auto m = slot.first_moment.data();
    auto v = slot.second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'D', 'U', 'A', 'L', 'K', 'G', 'C', 'K'};

template <typename U>
void write_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw std::runtime_error("checkpoint: truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void write_doubles(std::ostream& out, const Tensor& t) {
  std::vector<unsigned char> bytes(t.numel() * 8);
  std::size_t pos = 0;
  for (double x : t.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (std::size_t i = 0; i < 8; ++i) bytes[pos++] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void read_doubles(std::istream& in, Tensor& t) {
  for (double& x : t.data()) x = std::bit_cast<double>(read_le<std::uint64_t>(in));
}

std::string read_string(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, params.size());
  for (const auto& [name, slot] : params.slots()) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(slot.value.rank()));
    for (std::size_t d : slot.value.shape()) write_le<std::uint64_t>(out, d);
    write_doubles(out, slot.value);
    write_le<std::uint64_t>(out, slot.step);
    write_doubles(out, slot.first_moment);
    write_doubles(out, slot.second_moment);
  }
  write_le<std::uint64_t>(out, metadata.size());
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: '" + path.string() + "' is not a checkpoint file");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = read_le<std::uint64_t>(in);
  for (std::uint64_t p = 0; p < count; ++p) {
    const std::string name = read_string(in, read_le<std::uint32_t>(in));
    const auto rank = read_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(in);
    Tensor value(shape);
    read_doubles(in, value);
    ckpt.params.add(name, std::move(value));
    auto& slot = ckpt.params.slots().at(name);
    slot.step = read_le<std::uint64_t>(in);
    read_doubles(in, slot.first_moment);
    read_doubles(in, slot.second_moment);
  }
  ckpt.metadata = read_string(in, read_le<std::uint64_t>(in));
  return ckpt;
}

}  // namespace dualkg
