#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "more/error.hpp"

namespace more {

using Json = nlohmann::ordered_json;

struct MetricEntry {
  std::string name;
  double mean = 0.0;
  std::optional<double> median;
  std::size_t count = 0;
};

/// Named scalar metrics with sample counts, plus free-form counters (skipped
/// samples, warnings) and an echo of the configuration that produced them.
class MetricReport {
 public:
  MetricReport() = default;
  explicit MetricReport(std::string title) : title_(std::move(title)) {}

  const std::string& title() const { return title_; }
  const std::vector<MetricEntry>& entries() const { return entries_; }

  MetricReport& add(std::string name, double mean, std::optional<double> median, std::size_t count) {
    entries_.push_back({std::move(name), mean, median, count});
    return *this;
  }

  MetricReport& set_counter(const std::string& name, std::size_t value) {
    counters_[name] = value;
    return *this;
  }

  MetricReport& set_config(Json config) {
    config_ = std::move(config);
    return *this;
  }

  const Json& config() const { return config_; }
  const Json& counters() const { return counters_; }

  bool has(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  const MetricEntry& at(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw InvalidArgument("report: no metric named " + name);
  }

  double mean(const std::string& name) const { return at(name).mean; }
  double median(const std::string& name) const {
    const auto& e = at(name);
    if (!e.median) throw InvalidArgument("report: metric " + name + " has no median");
    return *e.median;
  }

  // Every metric must be finite with a positive count.
  void validate() const {
    for (const auto& e : entries_) {
      if (e.count == 0) throw DegenerateError("metric " + e.name + " has no samples");
      if (!std::isfinite(e.mean) || (e.median && !std::isfinite(*e.median)))
        throw DegenerateError("metric " + e.name + " is not finite");
    }
  }

  void merge(const MetricReport& other) {
    for (const auto& e : other.entries_) entries_.push_back(e);
    for (const auto& [k, v] : other.counters_.items()) counters_[k] = v;
  }

  Json to_json() const {
    Json j;
    j["title"] = title_;
    Json metrics = Json::object();
    for (const auto& e : entries_) {
      Json m;
      m["mean"] = e.mean;
      if (e.median) m["median"] = *e.median;
      m["count"] = e.count;
      metrics[e.name] = std::move(m);
    }
    j["metrics"] = std::move(metrics);
    j["counters"] = counters_.is_null() ? Json::object() : counters_;
    j["config"] = config_.is_null() ? Json::object() : config_;
    return j;
  }

  static MetricReport from_json(const Json& j) {
    MetricReport r(j.value("title", std::string{}));
    for (const auto& [name, m] : j.at("metrics").items()) {
      std::optional<double> med;
      if (m.contains("median")) med = m.at("median").get<double>();
      r.add(name, m.at("mean").get<double>(), med, m.at("count").get<std::size_t>());
    }
    if (j.contains("counters")) r.counters_ = j.at("counters");
    if (j.contains("config")) r.config_ = j.at("config");
    return r;
  }

  // Aligned plain-text table.
  std::string to_table() const {
    std::size_t w = 6;
    for (const auto& e : entries_) w = std::max(w, e.name.size());
    std::ostringstream os;
    if (!title_.empty()) os << title_ << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-*s  %14s  %14s  %8s\n", static_cast<int>(w), "metric", "mean", "median", "count");
    os << buf;
    for (const auto& e : entries_) {
      char med[32] = "-";
      if (e.median) std::snprintf(med, sizeof med, "%.6g", *e.median);
      std::snprintf(buf, sizeof buf, "%-*s  %14.6g  %14s  %8zu\n", static_cast<int>(w), e.name.c_str(), e.mean, med,
                    e.count);
      os << buf;
    }
    for (const auto& [k, v] : counters_.items()) os << "# " << k << ": " << v.dump() << '\n';
    return os.str();
  }

 private:
  std::string title_;
  std::vector<MetricEntry> entries_;
  Json counters_ = Json::object();
  Json config_;
};

}  // namespace more
