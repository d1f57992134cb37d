#include "nasb/checkpoint.hpp"

#include "nasb/error.hpp"
#include "nasb/io_util.hpp"
#include "nasb/serialize.hpp"

namespace nasb::ckpt {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'P'};

void write_tensor_table(serialize::Writer& w,
                        const std::vector<std::pair<std::string, Tensor>>& table) {
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    w.str(name);
    w.u8(1);  // dtype 1 = f64
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.size(); ++i) w.f64(t[i]);
  }
}

std::vector<std::pair<std::string, Tensor>> read_tensor_table(serialize::Reader& r,
                                                              const std::string& path) {
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> table;
  table.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype != 0 && dtype != 1)
      throw IoError(msg(path, ": tensor '", name, "' has unknown dtype ",
                        static_cast<int>(dtype)),
                    r.offset());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::int64_t n = shape_numel(shape);
    std::vector<double> values(static_cast<std::size_t>(n));
    if (dtype == 0)
      for (auto& v : values) v = static_cast<double>(r.f32());
    else
      for (auto& v : values) v = r.f64();
    table.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return table;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  serialize::Writer w;
  w.bytes(kMagic, 4);
  w.u32(version);
  w.u64(meta_json.size());
  w.bytes(meta_json.data(), meta_json.size());
  write_tensor_table(w, tensors);
  write_tensor_table(w, opt_tensors);
  w.u32(static_cast<std::uint32_t>(rng_state.size()));
  for (auto word : rng_state) w.u64(word);
  io::atomic_write(path, w.take());
}

Checkpoint Checkpoint::load(const std::string& path) {
  serialize::Reader r(io::read_file(path), path);
  r.expect_magic(kMagic, 4, "NCKP");
  Checkpoint c;
  c.version = r.u32();
  if (c.version != 1)
    throw IoError(msg(path, ": unsupported checkpoint version ", c.version), r.offset());
  const std::uint64_t meta_len = r.u64();
  c.meta_json.resize(meta_len);
  if (meta_len > 0) r.raw(c.meta_json.data(), meta_len);
  c.tensors = read_tensor_table(r, path);
  c.opt_tensors = read_tensor_table(r, path);
  const std::uint32_t rng_words = r.u32();
  c.rng_state.resize(rng_words);
  for (auto& word : c.rng_state) word = r.u64();
  r.expect_end();
  return c;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

}  // namespace nasb::ckpt
