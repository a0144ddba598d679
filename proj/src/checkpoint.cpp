#include "handnet/checkpoint.hpp"

#include <set>

#include "binary_io.hpp"
#include "fileutil.hpp"

namespace handnet {

namespace {

constexpr std::string_view kMagic = "HFCK";
constexpr std::string_view kMomentM = "@adam_m/";
constexpr std::string_view kMomentV = "@adam_v/";
constexpr std::string_view kStep = "@step";

void put_tensor(detail::ByteWriter& w, const std::string& name, const TensorF& t) {
  if (name.size() > 0xFFFF) throw Error("tensor name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape().dims()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) w.f32(v);
}

}  // namespace

std::string encode_checkpoint(const ModelState<float>& state) {
  if (state.step >= (std::uint64_t{1} << 32)) throw Error("step counter exceeds checkpoint range");
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(state.spec.id));
  w.u32(static_cast<std::uint32_t>(3 * state.params.size() + 1));
  for (const auto& [name, t] : state.params) put_tensor(w, name, t);
  for (const auto& [name, t] : state.adam_m) put_tensor(w, std::string(kMomentM) + name, t);
  for (const auto& [name, t] : state.adam_v) put_tensor(w, std::string(kMomentV) + name, t);
  const TensorF step = TensorF::from(Shape{2}, {static_cast<float>(state.step >> 16), static_cast<float>(state.step & 0xFFFF)});
  put_tensor(w, std::string(kStep), step);
  return w.bytes();
}

ModelState<float> decode_checkpoint(const std::string& bytes, const NetworkSpec& spec, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (r.take(4) != kMagic) r.fail("bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  const auto id = r.u8();
  if (id > 1) r.fail("unknown network id " + std::to_string(id));
  if (static_cast<NetworkId>(id) != spec.id) {
    throw MismatchError(source + " holds a " + to_string(static_cast<NetworkId>(id)) + " network, expected " +
                        to_string(spec.id));
  }

  // Shapes come from a fresh init of the requested spec.
  ModelState<float> state = init_params<float>(spec, 0);
  std::set<std::string> seen;
  bool have_step = false;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t name_len = r.u16();
    const std::string name(r.take(name_len));
    const std::size_t rank = r.u8();
    if (rank == 0) r.fail("tensor '" + name + "' has rank 0");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) {
      d = r.u32();
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
    }
    const Shape shape(dims);
    if (r.remaining() / 4 < shape.numel()) r.fail("truncated data for tensor '" + name + "'");
    std::vector<float> data(shape.numel());
    for (auto& v : data) v = r.f32();
    if (!seen.insert(name).second) r.fail("duplicate tensor '" + name + "'");

    if (name == kStep) {
      if (shape != Shape{2}) r.fail("malformed step tensor");
      state.step = (static_cast<std::uint64_t>(data[0]) << 16) + static_cast<std::uint64_t>(data[1]);
      have_step = true;
      continue;
    }
    TensorMap<float>* target = &state.params;
    std::string key = name;
    if (name.starts_with(kMomentM)) {
      target = &state.adam_m;
      key = name.substr(kMomentM.size());
    } else if (name.starts_with(kMomentV)) {
      target = &state.adam_v;
      key = name.substr(kMomentV.size());
    }
    const auto it = target->find(key);
    if (it == target->end()) throw MismatchError(source + " has tensor '" + name + "' unknown to the network");
    if (it->second.shape() != shape) {
      throw MismatchError(source + " tensor '" + name + "' has shape " + shape.str() + ", network expects " +
                          it->second.shape().str());
    }
    it->second = TensorF(shape, std::move(data));
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  for (const auto& name : spec.param_names()) {
    if (!seen.count(name)) throw MismatchError(source + " is missing parameter '" + name + "'");
  }
  if (!have_step) r.fail("missing step counter");
  return state;
}

void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(state));
}

ModelState<float> load_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec) {
  return decode_checkpoint(detail::read_file<FormatError>(path), spec, path.string());
}

}  // namespace handnet
