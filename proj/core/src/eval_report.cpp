#include "dynxl/eval_report.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "dynxl/binary_io.hpp"
#include "dynxl/errors.hpp"

namespace dynxl {

namespace {

constexpr std::string_view kReportFormat = "dynxl-report-1";

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("report: bad number for " + key + ": '" + s + "'");
  }
}

std::uint64_t parse_uint(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("report: bad integer for " + key + ": '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "format = " << kReportFormat << '\n'
     << "name = " << r.name << '\n'
     << "config_fingerprint = " << r.config_fingerprint << '\n'
     << "vocab_fingerprint = " << r.vocab_fingerprint << '\n'
     << "tokens = " << r.token_count << '\n'
     << "total_nats = " << exact(r.total_nats) << '\n'
     << "bits_per_token = " << exact(r.bits_per_token()) << '\n'
     << "perplexity = " << exact(r.perplexity()) << '\n'
     << "unknown_tokens = " << r.unknown_tokens << '\n'
     << "floored_probabilities = " << r.floored_probabilities << '\n'
     << "segments = " << r.segments.size() << '\n';
  for (std::size_t i = 0; i < r.segments.size(); ++i) {
    os << "segment." << i << " = " << r.segments[i].tokens << ' ' << exact(r.segments[i].nats) << '\n';
  }
  return os.str();
}

EvalReport parse_report(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::size_t, std::string>> seg_lines;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError("report: malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 3);
    if (key.rfind("segment.", 0) == 0) {
      seg_lines.emplace_back(parse_uint(key.substr(8), key), value);
    } else {
      kv[key] = value;
    }
  }
  if (kv["format"] != kReportFormat) throw DataError("report: unsupported format");
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("report: missing ") + key);
    return it->second;
  };
  EvalReport r;
  r.name = get("name");
  r.config_fingerprint = get("config_fingerprint");
  r.vocab_fingerprint = get("vocab_fingerprint");
  r.token_count = parse_uint(get("tokens"), "tokens");
  r.total_nats = parse_double(get("total_nats"), "total_nats");
  r.unknown_tokens = parse_uint(get("unknown_tokens"), "unknown_tokens");
  r.floored_probabilities = parse_uint(get("floored_probabilities"), "floored_probabilities");
  const auto n_seg = parse_uint(get("segments"), "segments");
  if (seg_lines.size() != n_seg) throw DataError("report: segment count mismatch");
  r.segments.resize(n_seg);
  for (const auto& [idx, value] : seg_lines) {
    if (idx >= n_seg) throw DataError("report: segment index out of range");
    const auto sp = value.find(' ');
    if (sp == std::string::npos) throw DataError("report: malformed segment record");
    r.segments[idx].tokens = parse_uint(value.substr(0, sp), "segment tokens");
    r.segments[idx].nats = parse_double(value.substr(sp + 1), "segment nats");
  }
  return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  io::write_text_atomic(path, format_report(report));
}

EvalReport read_report(const std::filesystem::path& path) {
  return parse_report(io::read_text_file(path));
}

void write_token_dump(const std::filesystem::path& path, std::span<const double> token_nats) {
  io::ByteWriter w;
  for (double v : token_nats) w.f64(v);
  io::write_file_atomic(path, w.buffer());
}

std::vector<double> read_token_dump(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() % 8 != 0) throw DataError(path.string() + ": not a float64 dump");
  io::ByteReader r(bytes);
  std::vector<double> out(bytes.size() / 8);
  for (auto& v : out) v = r.f64();
  return out;
}

}  // namespace dynxl
