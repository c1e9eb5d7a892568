#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "koop/binio.hpp"
#include "koop/dataset.hpp"
#include "koop/error.hpp"
#include "koop/model.hpp"
#include "koop/trainer.hpp"

namespace koop {

/// First step t (1-based) whose position error exceeds tau, or H when the
/// rollout never diverges.
inline std::size_t divergence_horizon(const RolloutResult& r, double tau = 0.5) {
  if (!(tau > 0)) throw ConfigError("divergence_horizon: tau must be positive");
  const std::size_t h = r.predicted.rows();
  if (r.truth.rows() != h) throw ConfigError("divergence_horizon: rollout has no matching truth");
  for (std::size_t t = 0; t < h; ++t)
    if (std::abs(static_cast<double>(r.predicted.at(t, 0)) - static_cast<double>(r.truth.at(t, 0))) > tau)
      return t + 1;
  return h;
}

/// RMS over results of the position error at each step.
inline std::vector<double> rollout_error_curve(const std::vector<RolloutResult>& results) {
  if (results.empty()) throw ConfigError("rollout_error_curve: empty result set");
  const std::size_t h = results.front().predicted.rows();
  std::vector<double> curve(h, 0.0);
  for (const auto& r : results) {
    if (r.predicted.rows() != h || r.truth.rows() != h)
      throw ConfigError("rollout_error_curve: results must share one horizon");
    for (std::size_t t = 0; t < h; ++t) {
      const double e = static_cast<double>(r.predicted.at(t, 0)) - static_cast<double>(r.truth.at(t, 0));
      curve[t] += e * e;
    }
  }
  for (auto& v : curve) v = std::sqrt(v / static_cast<double>(results.size()));
  return curve;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Divergence horizons of one model over a set of held-out windows.
struct HorizonReport {
  ModelKind kind = ModelKind::extended;
  std::string source;
  double tau = 0.5;
  std::size_t horizon = 0;
  std::vector<std::size_t> horizons;

  double median_horizon() const {
    std::vector<double> v(horizons.begin(), horizons.end());
    return median(std::move(v));
  }
};

/// Window ends and truth for held-out evaluation: seeded sample from the
/// validation tail with room for `horizon` future steps.
struct EvalWindows {
  std::vector<std::size_t> starts;
  std::vector<HistoryWindow> windows;
  std::vector<Tensor<float>> controls;  // [H x D_ctrl], control t drives t -> t+1
  std::vector<Tensor<float>> truth;     // [H x D_obs], observation at t+1
};

inline EvalWindows make_eval_windows(const TrajectoryDataset& ds, std::size_t history,
                                     std::size_t horizon, std::size_t count, std::uint64_t seed) {
  EvalWindows w;
  w.starts = validation_starts(ds, history, horizon, count, seed);
  if (w.starts.size() != count)
    throw ConfigError("evaluation: validation split too short for horizon " + std::to_string(horizon));
  for (auto s : w.starts) {
    w.windows.push_back(ds.window(s, history));
    w.controls.push_back(ds.control_slice(s, horizon));
    w.truth.push_back(ds.obs_slice(s + 1, horizon));
  }
  return w;
}

inline std::vector<RolloutResult> evaluate_rollouts(Model<float>& model, const EvalWindows& w) {
  auto results = rollout_batch(model, w.windows, w.controls);
  for (std::size_t i = 0; i < results.size(); ++i) results[i].truth = w.truth[i];
  return results;
}

inline HorizonReport horizon_report(const std::vector<RolloutResult>& results, double tau,
                                    std::string source = {}) {
  HorizonReport rep;
  rep.tau = tau;
  rep.source = std::move(source);
  if (!results.empty()) {
    rep.kind = results.front().kind;
    rep.horizon = results.front().predicted.rows();
  }
  for (const auto& r : results) rep.horizons.push_back(divergence_horizon(r, tau));
  return rep;
}

// ------------------------------------------------------------------ CSV

inline std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Comparison table: t, true_pos, pred_pos_traditional, pred_pos_convex,
/// pred_pos_extended, control. Columns for absent model kinds are empty.
/// All results must share truth and controls.
inline std::string comparison_csv(const std::vector<RolloutResult>& results) {
  if (results.empty()) throw ConfigError("emit_csv: no rollout results");
  const auto& ref = results.front();
  const std::size_t h = ref.predicted.rows();
  std::map<ModelKind, const RolloutResult*> by_kind;
  for (const auto& r : results) {
    if (r.predicted.rows() != h) throw ConfigError("emit_csv: results differ in horizon");
    by_kind[r.kind] = &r;
  }
  std::ostringstream os;
  os << "t,true_pos,pred_pos_traditional,pred_pos_convex,pred_pos_extended,control\n";
  for (std::size_t t = 0; t < h; ++t) {
    os << (t + 1) << ',';
    if (ref.truth.rows() == h) os << format_g(ref.truth.at(t, 0));
    for (auto k : {ModelKind::traditional, ModelKind::convex, ModelKind::extended}) {
      os << ',';
      if (auto it = by_kind.find(k); it != by_kind.end()) os << format_g(it->second->predicted.at(t, 0));
    }
    os << ',';
    if (ref.controls.rows() == h) os << format_g(ref.controls.at(t, 0));
    os << '\n';
  }
  return os.str();
}

inline void emit_csv(const std::vector<RolloutResult>& results, const std::string& path) {
  write_file(path, comparison_csv(results));
}

inline std::string horizon_csv(const std::vector<HorizonReport>& reports) {
  std::ostringstream os;
  os << "model,source,tau,horizon,windows,median_horizon,horizons\n";
  for (const auto& r : reports) {
    os << to_string(r.kind) << ',' << r.source << ',' << format_g(r.tau) << ',' << r.horizon << ','
       << r.horizons.size() << ',' << format_g(r.median_horizon()) << ',';
    for (std::size_t i = 0; i < r.horizons.size(); ++i) os << (i ? ";" : "") << r.horizons[i];
    os << '\n';
  }
  return os.str();
}

inline void emit_csv(const std::vector<HorizonReport>& reports, const std::string& path) {
  write_file(path, horizon_csv(reports));
}

// ------------------------------------------------------------------ SVG

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Self-contained 960x480 line plot of position vs step: true trajectory
/// plus one polyline per model, control force in a lower strip.
inline std::string comparison_svg(const std::vector<RolloutResult>& results) {
  if (results.empty()) throw ConfigError("emit_svg: no rollout results");
  const auto& ref = results.front();
  const std::size_t h = ref.predicted.rows();

  struct Series {
    std::string label;
    std::string color;
    std::vector<double> y;
  };
  std::vector<Series> series;
  if (ref.truth.rows() == h) {
    Series s{"True trajectory", "#000000", {}};
    for (std::size_t t = 0; t < h; ++t) s.y.push_back(ref.truth.at(t, 0));
    series.push_back(std::move(s));
  }
  const std::map<ModelKind, std::pair<std::string, std::string>> style{
      {ModelKind::extended, {"Extended Koopman Model", "#d62728"}},
      {ModelKind::convex, {"Convex Koopman Model", "#1f77b4"}},
      {ModelKind::traditional, {"Traditional Koopman Model", "#2ca02c"}}};
  for (const auto& r : results) {
    Series s{style.at(r.kind).first, style.at(r.kind).second, {}};
    for (std::size_t t = 0; t < h; ++t) s.y.push_back(r.predicted.at(t, 0));
    series.push_back(std::move(s));
  }

  double lo = -2.0, hi = 3.0;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  const double left = 60, right = 940, top = 30, bottom = 350;
  const double ctop = 380, cbottom = 460;
  auto px = [&](std::size_t t) { return left + (right - left) * (h > 1 ? double(t) / double(h - 1) : 0.0); };
  auto py = [&](double v) {
    if (!std::isfinite(v)) v = v > 0 ? hi : lo;
    return bottom - (bottom - top) * (v - lo) / (hi - lo);
  };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 960 480\" width=\"960\" height=\"480\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"960\" height=\"480\" fill=\"#ffffff\"/>\n"
     << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\""
     << bottom - top << "\" fill=\"none\" stroke=\"#888888\"/>\n"
     << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">Particle position vs time step</text>\n"
     << "<text x=\"10\" y=\"" << py(lo) << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fixed2(lo) << "</text>\n"
     << "<text x=\"10\" y=\"" << py(hi) + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fixed2(hi) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    os << "<polyline fill=\"none\" stroke=\"" << series[i].color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t t = 0; t < h; ++t) os << (t ? " " : "") << detail::fixed2(px(t)) << ',' << detail::fixed2(py(series[i].y[t]));
    os << "\"/>\n";
    const double ly = top + 16 + 16.0 * static_cast<double>(i);
    os << "<line x1=\"700\" y1=\"" << ly - 4 << "\" x2=\"720\" y2=\"" << ly - 4 << "\" stroke=\""
       << series[i].color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"726\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << detail::xml_escape(series[i].label) << "</text>\n";
  }
  if (ref.controls.rows() == h) {
    double cmax = 1e-9;
    for (std::size_t t = 0; t < h; ++t) cmax = std::max(cmax, std::abs(double(ref.controls.at(t, 0))));
    os << "<rect x=\"" << left << "\" y=\"" << ctop << "\" width=\"" << right - left << "\" height=\""
       << cbottom - ctop << "\" fill=\"none\" stroke=\"#888888\"/>\n"
       << "<text x=\"10\" y=\"" << (ctop + cbottom) / 2 << "\" font-family=\"sans-serif\" font-size=\"11\">Control</text>\n"
       << "<polyline fill=\"none\" stroke=\"#7f7f7f\" stroke-width=\"1\" points=\"";
    for (std::size_t t = 0; t < h; ++t) {
      const double y = (ctop + cbottom) / 2 - (cbottom - ctop) / 2 * double(ref.controls.at(t, 0)) / cmax;
      os << (t ? " " : "") << detail::fixed2(px(t)) << ',' << detail::fixed2(y);
    }
    os << "\"/>\n";
  }
  os << "<text x=\"470\" y=\"476\" font-family=\"sans-serif\" font-size=\"11\">Time steps</text>\n</svg>\n";
  return os.str();
}

inline void emit_svg(const std::vector<RolloutResult>& results, const std::string& path) {
  write_file(path, comparison_svg(results));
}

}  // namespace koop
