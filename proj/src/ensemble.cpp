#include "msst/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace msst {

namespace {

using json = nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

} // namespace

StreamScores load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scores: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_scores: " + path + ": " + e.what());
  }
  for (const char* key : {"tag", "classes", "ids", "labels", "scores"})
    if (!j.contains(key))
      throw std::runtime_error("load_scores: " + path + ": missing field \"" +
                               std::string(key) + "\"");
  StreamScores s;
  s.path = path;
  s.tag = j["tag"].get<std::string>();
  s.classes = j["classes"].get<index_t>();
  if (s.classes < 2)
    throw std::runtime_error("load_scores: " + path + ": classes must be at least 2");
  for (const auto& v : j["ids"]) s.ids.push_back(v.get<index_t>());
  for (const auto& v : j["labels"]) s.labels.push_back(v.get<index_t>());
  if (s.labels.size() != s.ids.size())
    throw std::runtime_error("load_scores: " + path + ": ids/labels length mismatch");
  const auto& rows = j["scores"];
  if (!rows.is_array() || rows.size() != s.ids.size())
    throw std::runtime_error("load_scores: " + path +
                             ": scores must have one row per id");
  std::size_t row_index = 0;
  for (const auto& row : rows) {
    if (!row.is_array() || static_cast<index_t>(row.size()) != s.classes)
      throw std::runtime_error("load_scores: " + path + ": score row width != classes");
    double row_sum = 0.0;
    for (const auto& v : row) {
      const double x = v.get<double>();
      s.scores.push_back(x);
      row_sum += x;
    }
    if (std::abs(row_sum - 1.0) > 1e-6)
      throw std::runtime_error("load_scores: " + path + ": score row " +
                               std::to_string(row_index) + " sums to " +
                               fmt_double(row_sum) + ", expected 1 within 1e-6");
    ++row_index;
  }
  return s;
}

void save_scores(const std::string& path, const StreamScores& scores) {
  if (scores.scores.size() != scores.ids.size() * static_cast<std::size_t>(scores.classes) ||
      scores.labels.size() != scores.ids.size())
    throw std::runtime_error("save_scores: inconsistent field sizes for " + path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scores: cannot open " + path);
  out << "{\"tag\":\"" << scores.tag << "\",\"classes\":" << scores.classes
      << ",\"ids\":[";
  for (std::size_t i = 0; i < scores.ids.size(); ++i)
    out << (i ? "," : "") << scores.ids[i];
  out << "],\"labels\":[";
  for (std::size_t i = 0; i < scores.labels.size(); ++i)
    out << (i ? "," : "") << scores.labels[i];
  out << "],\"scores\":[";
  for (std::size_t i = 0; i < scores.ids.size(); ++i) {
    out << (i ? ",[" : "[");
    for (index_t c = 0; c < scores.classes; ++c)
      out << (c ? "," : "")
          << fmt_double(scores.scores[i * static_cast<std::size_t>(scores.classes) +
                                      static_cast<std::size_t>(c)]);
    out << "]";
  }
  out << "]}\n";
  if (!out) throw std::runtime_error("save_scores: write failed for " + path);
}

EnsembleResult ensemble(const std::vector<StreamScores>& streams) {
  if (streams.empty()) throw std::runtime_error("ensemble: no score files");
  std::vector<const StreamScores*> order;
  for (const auto& s : streams) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const StreamScores* a, const StreamScores* b) {
                     return a->tag < b->tag;
                   });
  const StreamScores& ref = *order.front();
  for (const StreamScores* s : order) {
    const std::string where = s->path.empty() ? s->tag : s->path;
    const std::string ref_where = ref.path.empty() ? ref.tag : ref.path;
    if (s->classes != ref.classes)
      throw std::runtime_error("ensemble: class counts differ between " + where +
                               " and " + ref_where);
    if (s->ids != ref.ids)
      throw std::runtime_error("ensemble: sample ids differ between " + where + " and " +
                               ref_where);
    if (s->labels != ref.labels)
      throw std::runtime_error("ensemble: labels differ between " + where + " and " +
                               ref_where);
  }

  const std::size_t n = ref.ids.size();
  const index_t k = ref.classes;
  EnsembleResult result;
  result.predictions.resize(n);
  index_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index_t best = 0;
    double best_score = 0.0;
    for (index_t c = 0; c < k; ++c) {
      double sum = 0.0;
      for (const StreamScores* s : order)
        sum += s->scores[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
      if (c == 0 || sum > best_score) {
        best = c;
        best_score = sum;
      }
    }
    result.predictions[i] = best;
    if (best == ref.labels[i]) ++correct;
  }
  result.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return result;
}

} // namespace msst
