#include "msst/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace msst {

namespace {

using json = nlohmann::json;

constexpr double k_two_pi = 6.283185307179586476925286766559;

std::string line_err(const std::string& path, index_t line, const std::string& what) {
  return "load_dataset: " + path + ":" + std::to_string(line) + ": " + what;
}

// 17 significant decimal digits: enough for an exact double round trip.
void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

bool blank(const std::string& s) {
  for (char c : s)
    if (c != ' ' && c != '\t' && c != '\r') return false;
  return true;
}

double frac(double v) { return v - std::floor(v); }

} // namespace

std::vector<SkeletonSequence> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<SkeletonSequence> out;
  std::string line;
  index_t lineno = 0;
  index_t joints = -1, channels = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(line_err(path, lineno, e.what()));
    }
    if (!j.is_object() || !j.contains("label") || !j.contains("frames"))
      throw std::runtime_error(
          line_err(path, lineno, "expected {\"label\", \"frames\"}"));
    if (!j["label"].is_number_integer() || j["label"].get<index_t>() < 0)
      throw std::runtime_error(line_err(path, lineno, "label must be a nonnegative integer"));
    const auto& frames = j["frames"];
    if (!frames.is_array() || frames.empty())
      throw std::runtime_error(line_err(path, lineno, "frames must be a nonempty array"));

    SkeletonSequence seq;
    seq.label = j["label"].get<index_t>();
    seq.frames = static_cast<index_t>(frames.size());
    for (const auto& frame : frames) {
      if (!frame.is_array() || frame.empty())
        throw std::runtime_error(line_err(path, lineno, "each frame must be a nonempty array"));
      if (seq.joints == 0) seq.joints = static_cast<index_t>(frame.size());
      if (static_cast<index_t>(frame.size()) != seq.joints)
        throw std::runtime_error(line_err(path, lineno, "inconsistent joint count"));
      for (const auto& joint : frame) {
        if (!joint.is_array() || joint.size() < 2)
          throw std::runtime_error(
              line_err(path, lineno, "each joint needs at least 2 coordinates"));
        if (seq.channels == 0) seq.channels = static_cast<index_t>(joint.size());
        if (static_cast<index_t>(joint.size()) != seq.channels)
          throw std::runtime_error(line_err(path, lineno, "inconsistent channel count"));
        for (const auto& v : joint) {
          if (!v.is_number())
            throw std::runtime_error(line_err(path, lineno, "coordinates must be numbers"));
          seq.data.push_back(v.get<double>());
        }
      }
    }
    if (joints == -1) {
      joints = seq.joints;
      channels = seq.channels;
    } else if (seq.joints != joints || seq.channels != channels) {
      throw std::runtime_error(line_err(
          path, lineno,
          "joint/channel counts differ from earlier samples (" +
              std::to_string(seq.joints) + "x" + std::to_string(seq.channels) + " vs " +
              std::to_string(joints) + "x" + std::to_string(channels) + ")"));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<SkeletonSequence>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  std::string line;
  for (const auto& seq : samples) {
    line.clear();
    line += "{\"label\":";
    line += std::to_string(seq.label);
    line += ",\"frames\":[";
    for (index_t t = 0; t < seq.frames; ++t) {
      if (t) line += ',';
      line += '[';
      for (index_t n = 0; n < seq.joints; ++n) {
        if (n) line += ',';
        line += '[';
        for (index_t c = 0; c < seq.channels; ++c) {
          if (c) line += ',';
          append_double(line, seq.at(t, n, c));
        }
        line += ']';
      }
      line += ']';
    }
    line += "]}\n";
    out << line;
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

std::vector<SkeletonSequence> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2)
    throw std::runtime_error("generate_synthetic: need at least 2 classes");
  if (spec.per_class < 1 || spec.joints < 1)
    throw std::runtime_error("generate_synthetic: counts must be positive");
  if (spec.t_min < 2 || spec.t_max < spec.t_min)
    throw std::runtime_error("generate_synthetic: need 2 <= t_min <= t_max");
  if (spec.noise < 0.0)
    throw std::runtime_error("generate_synthetic: noise must be nonnegative");

  const index_t channels = 3;
  Rng rng(spec.seed);
  std::vector<SkeletonSequence> out;
  out.reserve(static_cast<std::size_t>(spec.num_classes * spec.per_class));
  for (index_t c = 0; c < spec.num_classes; ++c) {
    for (index_t i = 0; i < spec.per_class; ++i) {
      SkeletonSequence seq;
      seq.label = c;
      seq.joints = spec.joints;
      seq.channels = channels;
      seq.frames = spec.t_min + rng.randint(spec.t_max - spec.t_min + 1);
      seq.data.resize(static_cast<std::size_t>(seq.frames * seq.joints * channels));
      for (index_t t = 0; t < seq.frames; ++t) {
        const double s = static_cast<double>(t) / static_cast<double>(seq.frames - 1);
        for (index_t j = 0; j < spec.joints; ++j) {
          for (index_t ch = 0; ch < channels; ++ch) {
            const double freq = 1.0 + 0.5 * static_cast<double>(c);
            const double phase =
                k_two_pi * frac(0.37 * static_cast<double>(j) +
                                0.11 * static_cast<double>(ch) +
                                0.53 * static_cast<double>(c));
            const double amp =
                0.8 + 0.4 * frac(0.17 * static_cast<double>((j + 1) * (c + 1)) +
                                 0.29 * static_cast<double>(ch));
            const double dir = ch == 0 ? 1.0 : (ch == 1 ? -0.5 : 0.25);
            const double offset = 0.35 * static_cast<double>(c) * dir;
            double v = offset + amp * std::sin(k_two_pi * freq * s + phase);
            if (spec.noise > 0.0) v += spec.noise * rng.normal();
            seq.at(t, j, ch) = v;
          }
        }
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

} // namespace msst
