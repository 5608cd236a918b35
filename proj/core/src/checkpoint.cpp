#include "dynxl/checkpoint.hpp"

#include "dynxl/binary_io.hpp"
#include "dynxl/errors.hpp"
#include "dynxl/run_config.hpp"

namespace dynxl {

namespace {

constexpr std::string_view kMagic = "DTXL1";

void section(io::ByteWriter& out, std::string_view tag, const io::ByteWriter& payload) {
  out.raw(tag);
  out.u64(payload.size());
  out.bytes(payload.buffer());
}

void put_tensors(io::ByteWriter& w, const ParamSet& set) {
  w.u32(static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor& t = set[i];
    w.str(set.name(i));
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
}

ParamSet get_tensors(io::ByteReader& r) {
  ParamSet set;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw DataError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.u64();
      count *= d;
    }
    if (count > r.remaining() / 8) throw DataError("checkpoint: tensor '" + name + "' is truncated");
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64();
    set.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return set;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter out;
  out.raw(kMagic);
  {
    io::ByteWriter p;
    p.u32(kCheckpointVersion);
    section(out, "VERS", p);
  }
  {
    io::ByteWriter p;
    p.raw(format_model_config(ck.params.config));
    section(out, "CONF", p);
  }
  {
    io::ByteWriter p;
    put_tensors(p, ck.params.tensors);
    section(out, "PARM", p);
  }
  if (ck.stats) {
    io::ByteWriter p;
    p.u64(ck.stats->segments);
    p.f64(ck.stats->global_mean);
    put_tensors(p, ck.stats->rms);
    section(out, "STAT", p);
  }
  {
    io::ByteWriter p;
    p.str(ck.vocab_fingerprint);
    section(out, "VOCB", p);
  }
  {
    io::ByteWriter p;
    p.u64(ck.seed);
    p.u64(ck.steps);
    section(out, "PROV", p);
  }
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic) throw DataError("not a checkpoint file");
  Checkpoint ck;
  bool have_version = false, have_config = false, have_params = false, have_vocab = false;
  while (!r.done()) {
    const std::string tag = r.raw(4);
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw DataError("checkpoint: section " + tag + " is truncated");
    io::ByteReader p(r.bytes(static_cast<std::size_t>(len)));
    if (tag == "VERS") {
      const std::uint32_t v = p.u32();
      if (v != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(v));
      have_version = true;
    } else if (tag == "CONF") {
      ck.params.config = parse_model_config(p.raw(p.remaining()));
      have_config = true;
    } else if (tag == "PARM") {
      ck.params.tensors = get_tensors(p);
      have_params = true;
    } else if (tag == "STAT") {
      GradStats stats;
      stats.segments = p.u64();
      stats.global_mean = p.f64();
      stats.rms = get_tensors(p);
      ck.stats = std::move(stats);
    } else if (tag == "VOCB") {
      ck.vocab_fingerprint = p.str();
      have_vocab = true;
    } else if (tag == "PROV") {
      ck.seed = p.u64();
      ck.steps = p.u64();
    } else {
      throw DataError("checkpoint: unknown section '" + tag + "'");
    }
    if (!p.done()) throw DataError("checkpoint: trailing bytes in section " + tag);
  }
  if (!have_version || !have_config || !have_params || !have_vocab) {
    throw DataError("checkpoint: missing required section");
  }
  ck.params.config.validate();
  const ModelParams shape_ref = init_model(ck.params.config, 0);
  if (!shape_ref.tensors.same_layout(ck.params.tensors)) {
    throw DataError("checkpoint: parameters do not match the stored model config");
  }
  if (ck.stats && !ck.stats->rms.same_layout(ck.params.tensors)) {
    throw DataError("checkpoint: gradient statistics do not match the parameters");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  io::write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

void require_vocab(const Checkpoint& checkpoint, const std::string& fingerprint) {
  if (checkpoint.vocab_fingerprint != fingerprint) {
    throw FingerprintError("vocabulary fingerprint mismatch: checkpoint has " + checkpoint.vocab_fingerprint +
                           ", data has " + fingerprint);
  }
}

}  // namespace dynxl
