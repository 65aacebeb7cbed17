#include "expertgen/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write '" + path + "'");
  }
  return out;
}

void append_vec(std::ostream& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out << ',' << format_real(v(i));
  }
}

void append_header(std::ostream& out, const char* prefix, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    out << ',' << prefix << i;
  }
}

struct Frame {
  double x0, x1, y0, y1;
  double left = 60, top = 30, width = 420, height = 300;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
  double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

void axes(std::ostream& svg, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  svg << "<rect x='" << f.left << "' y='" << f.top << "' width='" << f.width << "' height='" << f.height
      << "' fill='none' stroke='#444'/>\n";
  char buf[64];
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    svg << "<text x='" << f.px(xv) << "' y='" << f.top + f.height + 16 << "' font-size='11' text-anchor='middle'>"
        << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    svg << "<text x='" << f.left - 6 << "' y='" << f.py(yv) + 4 << "' font-size='11' text-anchor='end'>" << buf
        << "</text>\n";
  }
  svg << "<text x='" << f.left + f.width / 2 << "' y='" << f.top + f.height + 34
      << "' font-size='12' text-anchor='middle'>" << xlabel << "</text>\n";
  svg << "<text x='14' y='" << f.top + f.height / 2 << "' font-size='12' transform='rotate(-90 14 "
      << f.top + f.height / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n";
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_samples_csv(const std::string& path, const Mat& samples) {
  auto out = open_out(path);
  out << "chain";
  append_header(out, "x_", samples.cols());
  out << '\n';
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    out << r;
    append_vec(out, samples.row(r).transpose());
    out << '\n';
  }
}

void write_trace_csv(const std::string& path, const std::vector<SamplerTrace>& traces) {
  auto out = open_out(path);
  out << "chain,step,t,s,applied_weight,loss,grad_norm,clipped_fraction,max_abs_clipped";
  if (!traces.empty() && !traces.front().steps.empty()) {
    const auto& s = traces.front().steps.front();
    append_header(out, "z_", s.z_t.size());
    append_header(out, "x0_", s.x0_hat.size());
    append_header(out, "obs_", s.observation.size());
  }
  out << '\n';
  for (std::size_t c = 0; c < traces.size(); ++c) {
    for (std::size_t i = 0; i < traces[c].steps.size(); ++i) {
      const auto& r = traces[c].steps[i];
      out << c << ',' << i << ',' << r.t << ',' << r.s << ',' << format_real(r.applied_weight) << ','
          << format_real(r.loss) << ',' << format_real(r.grad_norm) << ',' << format_real(r.clipped_fraction) << ','
          << format_real(r.max_abs_clipped);
      append_vec(out, r.z_t);
      append_vec(out, r.x0_hat);
      append_vec(out, r.observation);
      out << '\n';
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports) {
  auto out = open_out(path);
  out << "name,task_metric,mean_nll,sw,penalty_count,n_samples,fingerprint\n";
  for (const auto& r : reports) {
    out << r.name << ',' << format_real(r.task_metric) << ',' << format_real(r.mean_nll) << ',' << format_real(r.sw)
        << ',' << r.penalty_count << ',' << r.n_samples << ',' << r.fingerprint << '\n';
  }
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  auto out = open_out(path);
  out << "axis,value,expert,task_metric,mean_nll,sw,penalty_count,n_samples\n";
  for (const auto& row : rows) {
    for (const auto& r : row.reports) {
      out << to_string(row.axis) << ',' << format_real(row.value) << ',' << r.name << ',' << format_real(r.task_metric)
          << ',' << format_real(r.mean_nll) << ',' << format_real(r.sw) << ',' << r.penalty_count << ','
          << r.n_samples << '\n';
    }
  }
}

void write_trajectory_csv(const std::string& path, const TrajectoryReport& report) {
  auto out = open_out(path);
  out << "step,t,backend,sw,cosine,baseline_sw\n";
  for (const auto& r : report.rows) {
    out << r.step << ',' << r.t << ',' << to_string(r.backend) << ',' << format_real(r.sw) << ','
        << format_real(r.cosine) << ',' << format_real(report.baseline_sw) << '\n';
  }
}

void write_invariance_csv(const std::string& path, const std::vector<InvarianceRow>& rows) {
  auto out = open_out(path);
  out << "evaluator,task_metric,mean_nll,penalty_count,n_samples\n";
  for (const auto& r : rows) {
    out << r.evaluator << ',' << format_real(r.report.task_metric) << ',' << format_real(r.report.mean_nll) << ','
        << r.report.penalty_count << ',' << r.report.n_samples << '\n';
  }
}

void write_manifest(const std::string& path, const nlohmann::json& manifest) {
  auto out = open_out(path);
  out << manifest.dump(2) << '\n';
}

void write_scatter_svg(const std::string& path, const Mat& samples, const GaussianMixture& mixture) {
  if (samples.cols() < 2 || mixture.dim() < 2) {
    throw ParameterError("scatter plot needs at least two dimensions");
  }
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  auto grow = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    if (std::isfinite(samples(r, 0)) && std::isfinite(samples(r, 1))) grow(samples(r, 0), samples(r, 1));
  }
  for (const auto& c : mixture.components()) {
    const double sx = 2.0 * std::sqrt(c.covariance(0, 0));
    const double sy = 2.0 * std::sqrt(c.covariance(1, 1));
    grow(c.mean(0) - sx, c.mean(1) - sy);
    grow(c.mean(0) + sx, c.mean(1) + sy);
  }
  const double pad_x = 0.05 * (hi_x - lo_x + 1e-9);
  const double pad_y = 0.05 * (hi_y - lo_y + 1e-9);
  Frame f{lo_x - pad_x, hi_x + pad_x, lo_y - pad_y, hi_y + pad_y};

  auto out = open_out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='500' height='380' font-family='sans-serif'>\n";
  axes(out, f, "x_0", "x_1");
  for (const auto& c : mixture.components()) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(c.covariance.topLeftCorner<2, 2>().eval());
    for (double k : {1.0, 2.0}) {
      out << "<polyline fill='none' stroke='#888' stroke-dasharray='4 3' points='";
      for (int i = 0; i <= 64; ++i) {
        const double a = 2.0 * std::numbers::pi * i / 64.0;
        const Eigen::Vector2d u(std::cos(a), std::sin(a));
        const Eigen::Vector2d p = c.mean.head<2>() + k * eig.eigenvectors() *
                                                         (eig.eigenvalues().cwiseSqrt().cwiseProduct(u));
        out << f.px(p(0)) << ',' << f.py(p(1)) << ' ';
      }
      out << "'/>\n";
    }
  }
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    if (!std::isfinite(samples(r, 0)) || !std::isfinite(samples(r, 1))) continue;
    out << "<circle cx='" << f.px(samples(r, 0)) << "' cy='" << f.py(samples(r, 1))
        << "' r='2' fill='#1f77b4' fill-opacity='0.6'/>\n";
  }
  out << "</svg>\n";
}

void write_trajectory_svg(const std::string& path, const TrajectoryReport& report) {
  std::vector<BackendKind> backends;
  double max_sw = report.baseline_sw;
  for (const auto& r : report.rows) {
    if (std::find(backends.begin(), backends.end(), r.backend) == backends.end()) backends.push_back(r.backend);
    max_sw = std::max(max_sw, r.sw);
  }
  const double last = std::max(1, report.n_steps() - 1);
  Frame sw{0.0, last, 0.0, max_sw * 1.05 + 1e-12};
  Frame cs{0.0, last, std::min(0.0, [&] {
                        double m = 1.0;
                        for (const auto& r : report.rows) m = std::min(m, r.cosine);
                        return m;
                      }()),
           1.0};
  cs.left = 560;

  auto out = open_out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='1040' height='400' font-family='sans-serif'>\n";
  axes(out, sw, "grid step", "sliced Wasserstein");
  axes(out, cs, "grid step", "cosine to final");
  out << "<line x1='" << sw.left << "' x2='" << sw.left + sw.width << "' y1='" << sw.py(report.baseline_sw)
      << "' y2='" << sw.py(report.baseline_sw) << "' stroke='#999' stroke-dasharray='5 4'/>\n";
  for (std::size_t b = 0; b < backends.size(); ++b) {
    const char* colour = kPalette[b % std::size(kPalette)];
    std::ostringstream p_sw, p_cs;
    for (const auto& r : report.rows) {
      if (r.backend != backends[b]) continue;
      p_sw << sw.px(r.step) << ',' << sw.py(r.sw) << ' ';
      p_cs << cs.px(r.step) << ',' << cs.py(r.cosine) << ' ';
    }
    out << "<polyline fill='none' stroke='" << colour << "' stroke-width='2' points='" << p_sw.str() << "'/>\n";
    out << "<polyline fill='none' stroke='" << colour << "' stroke-width='2' points='" << p_cs.str() << "'/>\n";
    out << "<text x='" << sw.left + 10 << "' y='" << sw.top + 16 + 16 * static_cast<double>(b) << "' font-size='12' fill='"
        << colour << "'>" << to_string(backends[b]) << "</text>\n";
  }
  out << "</svg>\n";
}

std::string fingerprint(const nlohmann::json& doc) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace expertgen
