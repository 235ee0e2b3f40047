#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "io.hpp"
#include "mtopt/errors.hpp"

namespace mtopt::cli {

Json to_json(const RunSummary& r) {
  return Json{{"run_id", r.run_id},
              {"method", r.method},
              {"seed", r.seed},
              {"l2", r.l2},
              {"dropout", r.dropout},
              {"status", r.status},
              {"error", r.error},
              {"selected_epoch", r.selected_epoch},
              {"best_val", r.best_val},
              {"test_avg", r.test_avg},
              {"test_metrics", r.test_metrics},
              {"epoch_seconds", r.epoch_seconds},
              {"backwards", r.backwards},
              {"head_backwards", r.head_backwards},
              {"csv", r.csv}};
}

RunSummary summary_from_json(const Json& j) {
  RunSummary r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.l2 = j.at("l2").get<double>();
    r.dropout = j.at("dropout").get<double>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", "");
    r.selected_epoch = j.at("selected_epoch").get<int>();
    r.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("best_val").get<double>();
    r.test_avg = j.at("test_avg").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("test_avg").get<double>();
    for (const auto& v : j.at("test_metrics"))
      r.test_metrics.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
    r.backwards = j.at("backwards").get<std::uint64_t>();
    r.head_backwards = j.at("head_backwards").get<std::uint64_t>();
    r.csv = j.at("csv").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed run summary: ") + e.what());
  }
  return r;
}

std::vector<RunSummary> load_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("'" + path + "' is not valid JSON");
  }
  if (!j.contains("runs") || !j["runs"].is_array()) throw UsageError("'" + path + "' has no runs array");
  std::vector<RunSummary> out;
  for (const auto& r : j["runs"]) out.push_back(summary_from_json(r));
  return out;
}

Interval mean_ci(std::vector<double> values) {
  Interval r;
  r.n = values.size();
  if (values.empty()) {
    r.mean = r.se = r.half_width = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(r.n);
  if (r.n < 2) {
    r.se = r.half_width = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  r.se = sd / std::sqrt(static_cast<double>(r.n));
  r.half_width = 1.96 * r.se;
  return r;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<MethodReport> summarize(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw UsageError("report: no run records");
  std::map<std::string, std::vector<const RunSummary*>> by_method;
  for (const auto& r : runs) by_method[r.method].push_back(&r);
  std::vector<MethodReport> out;
  for (const auto& [method, rs] : by_method) {
    MethodReport m;
    m.method = method;
    std::vector<double> tests, seconds;
    for (const auto* r : rs) {
      m.backwards += r->backwards;
      m.head_backwards += r->head_backwards;
      if (r->status != "ok") {
        ++m.diverged;
        continue;
      }
      tests.push_back(r->test_avg);
      seconds.insert(seconds.end(), r->epoch_seconds.begin(), r->epoch_seconds.end());
    }
    m.test = mean_ci(tests);
    m.seconds_q1 = quantile(seconds, 0.25);
    m.seconds_q3 = quantile(seconds, 0.75);
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

std::string num(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string full(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string ci_text(const Interval& i) {
  if (i.n == 0) return "no runs";
  if (i.n == 1) return num(i.mean) + " (n=1, CI n/a)";
  return num(i.mean) + " +/- " + num(i.half_width) + " (n=" + std::to_string(i.n) + ")";
}

}  // namespace

std::string render_text(const std::vector<MethodReport>& rows) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-28s %-34s %-24s %12s %12s %8s\n", "method", "test avg (95% CI)",
                "epoch seconds IQR", "backwards", "head_bwd", "diverged");
  out << line;
  for (const auto& r : rows) {
    const std::string iqr = "[" + num(r.seconds_q1, 5) + ", " + num(r.seconds_q3, 5) + "]";
    std::snprintf(line, sizeof line, "%-28s %-34s %-24s %12llu %12llu %8zu\n", r.method.c_str(),
                  ci_text(r.test).c_str(), iqr.c_str(), static_cast<unsigned long long>(r.backwards),
                  static_cast<unsigned long long>(r.head_backwards), r.diverged);
    out << line;
  }
  return out.str();
}

std::string render_csv(const std::vector<MethodReport>& rows) {
  std::ostringstream out;
  out << "method,runs,test_mean,test_se,test_ci_half,seconds_q1,seconds_q3,backwards,head_backwards,diverged\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.test.n << ',' << full(r.test.mean) << ',' << full(r.test.se) << ','
        << full(r.test.half_width) << ',' << full(r.seconds_q1) << ',' << full(r.seconds_q3) << ',' << r.backwards
        << ',' << r.head_backwards << ',' << r.diverged << '\n';
  }
  return out.str();
}

std::vector<SweepRow> sweep_table(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw UsageError("sweep: no run records");
  std::map<std::tuple<std::string, double, double>, std::pair<std::vector<double>, std::vector<double>>> cells;
  for (const auto& r : runs) {
    auto& cell = cells[{r.method, r.l2, r.dropout}];
    if (r.status != "ok") continue;
    cell.first.push_back(r.best_val);
    cell.second.push_back(r.test_avg);
  }
  std::vector<SweepRow> out;
  for (const auto& [key, vals] : cells) {
    SweepRow row;
    std::tie(row.method, row.l2, row.dropout) = key;
    row.val = mean_ci(vals.first);
    row.test = mean_ci(vals.second);
    out.push_back(std::move(row));
  }
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isnan(out[i].val.mean)) continue;
    auto it = best.find(out[i].method);
    if (it == best.end() || out[i].val.mean > out[it->second].val.mean) best[out[i].method] = i;
  }
  for (const auto& [m, i] : best) out[i].best = true;
  return out;
}

std::string render_sweep_text(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-28s %10s %8s %-34s %-34s %4s\n", "method", "l2", "dropout", "best val (95% CI)",
                "test avg (95% CI)", "best");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-28s %10g %8g %-34s %-34s %4s\n", r.method.c_str(), r.l2, r.dropout,
                  ci_text(r.val).c_str(), ci_text(r.test).c_str(), r.best ? "*" : "");
    out << line;
  }
  return out.str();
}

std::string render_sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "method,l2,dropout,runs,val_mean,val_ci_half,test_mean,test_ci_half,best\n";
  for (const auto& r : rows) {
    out << r.method << ',' << full(r.l2) << ',' << full(r.dropout) << ',' << r.val.n << ',' << full(r.val.mean) << ','
        << full(r.val.half_width) << ',' << full(r.test.mean) << ',' << full(r.test.half_width) << ','
        << (r.best ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace mtopt::cli
