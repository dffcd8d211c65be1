#include "ecgx/figures.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace ecgx {

std::string heat_color(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  auto channel = [t](double center) { return std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0); };
  const double r = channel(3.0), g = channel(2.0), b = channel(1.0);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(r * 255)),
                static_cast<int>(std::lround(g * 255)), static_cast<int>(std::lround(b * 255)));
  return buf;
}

namespace {

const std::string kClassColors[] = {"#d62728", "#2ca02c", "#1f77b4", "#7f7f7f"};

std::string class_color(std::size_t c) { return kClassColors[c % 4]; }

std::string name_of(std::span<const std::string> names, std::size_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {
    out_ << std::fixed << std::setprecision(2);
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
         << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, double opacity = 1.0) {
    out_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h << "\" fill=\"" << fill
         << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    out_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\" stroke=\"" << stroke
         << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12, const std::string& anchor = "start") {
    out_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\"" << size
         << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }
  /// Polyline of `v` mapped into the box [x, x+w] x [y, y+h].
  void trace(std::span<const double> v, double x, double y, double w, double h, const std::string& stroke,
             double lo, double hi, double width = 1.0) {
    if (v.empty()) return;
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const std::size_t stride = std::max<std::size_t>(1, v.size() / 4000);
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\" points=\"";
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double px = x + w * (v.size() == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(v.size() - 1));
      const double py = y + h * (1.0 - (v[i] - lo) / (hi - lo));
      out_ << px << ',' << py << ' ';
    }
    out_ << "\"/>\n";
  }
  /// Colour strip of normalised values.
  void heat_strip(std::span<const double> v, double x, double y, double w, double h, double opacity = 1.0) {
    if (v.empty()) return;
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double lo = *mn, span = std::max(*mx - *mn, 1e-12);
    const std::size_t cols = std::min<std::size_t>(v.size(), 600);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t a = c * v.size() / cols, b = std::max(a + 1, (c + 1) * v.size() / cols);
      double s = 0.0;
      for (std::size_t i = a; i < b; ++i) s += v[i];
      s /= static_cast<double>(b - a);
      rect(x + w * c / cols, y, w / cols + 0.3, h, heat_color((s - lo) / span), opacity);
    }
  }
  std::string str() {
    out_ << "</svg>\n";
    return out_.str();
  }
  double width() const { return w_; }
  double height() const { return h_; }

 private:
  double w_, h_;
  std::ostringstream out_;
};

std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

std::pair<double, double> range_of(std::span<const double> v) {
  if (v.empty()) return {0.0, 1.0};
  const auto [a, b] = std::minmax_element(v.begin(), v.end());
  return {*a, *b};
}

std::string overlay_svg(const EcgRecord& record, std::span<const double> map, const std::string& title,
                        const std::string& legend) {
  const std::size_t n = std::min(record.true_length(), map.size());
  auto sig = as_double(record.samples);
  sig.resize(n);
  Svg svg(1000, 260);
  svg.text(10, 18, title, 14);
  svg.heat_strip(map.subspan(0, n), 40, 30, 940, 200, 0.55);
  const auto [lo, hi] = range_of(sig);
  svg.trace(sig, 40, 40, 940, 180, "black", lo, hi, 1.0);
  svg.text(40, 250, "0 s", 10);
  std::ostringstream end;
  end << std::fixed << std::setprecision(1) << static_cast<double>(n) / record.sample_rate << " s";
  svg.text(980, 250, end.str(), 10, "end");
  svg.text(510, 250, legend, 10, "middle");
  return svg.str();
}

}  // namespace

void write_cam_csv(std::ostream& out, const EcgRecord& record, const ClassActivationMap& cam) {
  out << "sample,signal,cam\n";
  out << std::setprecision(9);
  const std::size_t n = std::min(record.true_length(), cam.upsampled.size());
  for (std::size_t i = 0; i < n; ++i) out << i << ',' << record.samples[i] << ',' << cam.upsampled[i] << '\n';
}

void write_attention_csv(std::ostream& out, const EcgRecord& record, const GatedAttentionMap& map) {
  out << "sample,signal,alpha\n";
  out << std::setprecision(9);
  const std::size_t n = std::min(record.true_length(), map.upsampled.size());
  for (std::size_t i = 0; i < n; ++i) out << i << ',' << record.samples[i] << ',' << map.upsampled[i] << '\n';
}

void write_decision_csv(std::ostream& out, const DecisionTrace& trace, std::span<const std::string> class_names) {
  const std::size_t C = trace.softmax.empty() ? 0 : trace.softmax[0].size();
  out << "step,sample_begin,sample_end";
  for (std::size_t c = 0; c < C; ++c) out << ',' << name_of(class_names, c);
  out << ",argmax\n" << std::setprecision(9);
  for (std::size_t t = 0; t < trace.softmax.size(); ++t) {
    out << t << ',' << trace.sample_ranges[t].first << ',' << trace.sample_ranges[t].second;
    for (double p : trace.softmax[t]) out << ',' << p;
    out << ',' << name_of(class_names, static_cast<std::size_t>(trace.argmax[t])) << '\n';
  }
}

void write_shift_grid_csv(std::ostream& out, const PerturbationResult& result) {
  out << "index,sample,shift\n" << std::setprecision(9);
  for (std::size_t j = 0; j < result.grid.coarse.size(); ++j) {
    out << j << ',' << j * result.grid.factor << ',' << result.grid.coarse[j] << '\n';
  }
}

void write_shift_scores_csv(std::ostream& out, const PerturbationResult& result, std::span<const std::string> class_names) {
  out << "class,before,after\n" << std::setprecision(9);
  for (std::size_t c = 0; c < result.before.size(); ++c) {
    out << name_of(class_names, c) << ',' << result.before[c] << ',' << result.after[c] << '\n';
  }
}

void write_gate_trace_csv(std::ostream& out, const GateTrace& trace) {
  out << "step";
  for (const auto& q : trace.quantities) {
    for (std::size_t u = 0; u < trace.units; ++u) out << ',' << q << '_' << u;
  }
  out << '\n' << std::setprecision(9);
  for (std::size_t e = 0; e < trace.entries(); ++e) {
    out << trace.steps[e];
    for (std::size_t q = 0; q < trace.quantities.size(); ++q) {
      for (std::size_t u = 0; u < trace.units; ++u) out << ',' << trace.value(e, q, u);
    }
    out << '\n';
  }
}

void write_loss_csv(std::ostream& out, std::span<const EpochStats> history) {
  out << "epoch,loss,seconds";
  std::vector<std::string> groups;
  if (!history.empty()) {
    for (const auto& [g, lr] : history[0].lr) groups.push_back(g);
  }
  for (const auto& g : groups) out << ",lr_" << g;
  out << '\n' << std::setprecision(9);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.loss << ',' << e.seconds;
    for (const auto& g : groups) {
      auto it = e.lr.find(g);
      out << ',' << (it == e.lr.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
}

std::string cam_svg(const EcgRecord& record, const ClassActivationMap& cam, const std::string& title) {
  return overlay_svg(record, cam.upsampled, title, "CAM: red = high, blue = low");
}

std::string attention_svg(const EcgRecord& record, const GatedAttentionMap& map, const std::string& title) {
  return overlay_svg(record, map.upsampled, title, "attention coefficient: red = high, blue = low");
}

std::string decision_svg(const EcgRecord& record, const DecisionTrace& trace, std::span<const std::string> class_names) {
  const std::size_t C = trace.softmax.empty() ? 0 : trace.softmax[0].size();
  const double row = 50, top = 150;
  Svg svg(1000, top + row * static_cast<double>(C + 1) + 30);
  svg.text(10, 18, "Class decision over time: " + record.id, 14);
  auto sig = as_double(record.samples);
  const auto [lo, hi] = range_of(sig);
  svg.trace(sig, 60, 30, 920, 110, "black", lo, hi);
  const std::size_t T = trace.softmax.size();
  const double L = static_cast<double>(std::max<std::size_t>(1, record.true_length()));
  for (std::size_t c = 0; c < C; ++c) {
    const double y = top + row * static_cast<double>(c);
    svg.text(10, y + row / 2, name_of(class_names, c), 12);
    for (std::size_t t = 0; t < T; ++t) {
      const double x0 = 60 + 920 * trace.sample_ranges[t].first / L;
      const double x1 = 60 + 920 * trace.sample_ranges[t].second / L;
      svg.rect(x0, y + 2, std::max(0.5, x1 - x0), row - 4, heat_color(trace.softmax[t][c]));
    }
  }
  const double y = top + row * static_cast<double>(C);
  svg.text(10, y + row / 2, "decision", 12);
  for (std::size_t t = 0; t < T; ++t) {
    const double x0 = 60 + 920 * trace.sample_ranges[t].first / L;
    const double x1 = 60 + 920 * trace.sample_ranges[t].second / L;
    svg.rect(x0, y + 2, std::max(0.5, x1 - x0), row - 4, class_color(static_cast<std::size_t>(trace.argmax[t])));
  }
  double lx = 60;
  for (std::size_t c = 0; c < C; ++c) {
    svg.rect(lx, y + row + 8, 12, 12, class_color(c));
    svg.text(lx + 16, y + row + 18, name_of(class_names, c), 11);
    lx += 80;
  }
  return svg.str();
}

std::string perturbation_svg(const EcgRecord& record, const PerturbationResult& result,
                             std::span<const std::string> class_names) {
  Svg svg(1000, 470);
  std::ostringstream title;
  title << std::fixed << std::setprecision(2) << "Shift perturbation: " << record.id << "  before [";
  for (std::size_t c = 0; c < result.before.size(); ++c) title << (c ? " " : "") << name_of(class_names, c) << ' ' << result.before[c];
  title << "]  after [";
  for (std::size_t c = 0; c < result.after.size(); ++c) title << (c ? " " : "") << name_of(class_names, c) << ' ' << result.after[c];
  title << ']';
  svg.text(10, 18, title.str(), 12);
  const double L = static_cast<double>(std::max<std::size_t>(1, record.true_length()));
  svg.rect(40, 30, 940, 30, "#f0f0f0");
  svg.text(45, 50, "events", 10);
  for (std::size_t e : record.events) {
    const double x = 40 + 940 * static_cast<double>(e) / L;
    svg.line(x, 30, x, 60, "#d62728", 2.0);
  }
  auto sig = as_double(record.samples);
  auto [lo, hi] = range_of(sig);
  const auto [wl, wh] = range_of(result.warped);
  lo = std::min(lo, wl);
  hi = std::max(hi, wh);
  svg.trace(sig, 40, 75, 940, 200, "#888888", lo, hi, 1.0);
  svg.trace(result.warped, 40, 75, 940, 200, "#d62728", lo, hi, 1.0);
  svg.text(45, 90, "original (grey) vs warped (red)", 10);
  const auto fine = result.grid.fine();
  double m = 1e-6;
  for (double v : fine) m = std::max(m, std::abs(v));
  svg.line(40, 375, 980, 375, "#cccccc");
  svg.trace(fine, 40, 295, 940, 160, "#1f77b4", -m, m, 1.2);
  std::ostringstream cap;
  cap << std::setprecision(3) << "shift (max |shift| = " << m << ")";
  svg.text(45, 310, cap.str(), 10);
  return svg.str();
}

std::string gate_trace_svg(const GateTrace& trace) {
  const std::size_t Q = trace.quantities.size(), U = trace.units, E = trace.entries();
  const double cell_h = 14, gap = 10;
  Svg svg(1000, 40 + static_cast<double>(Q) * (cell_h * static_cast<double>(U) + gap));
  svg.text(10, 18, "Gate and state trace (" + std::string(cell_kind_name(trace.cell)) + ", layer " +
                       std::to_string(trace.layer) + (trace.reverse ? ", backward" : "") + ")", 14);
  double y = 30;
  for (std::size_t q = 0; q < Q; ++q) {
    svg.text(10, y + cell_h * static_cast<double>(U) / 2 + 4, trace.quantities[q], 12);
    const bool sig = trace.quantities[q] == "i" || trace.quantities[q] == "f" || trace.quantities[q] == "o" ||
                     trace.quantities[q] == "r" || trace.quantities[q] == "z";
    for (std::size_t u = 0; u < U; ++u) {
      for (std::size_t e = 0; e < E; ++e) {
        const double v = trace.value(e, q, u);
        const double t = sig ? v : 0.5 * (std::tanh(v) + 1.0);
        svg.rect(40 + 940.0 * e / E, y, 940.0 / E + 0.3, cell_h - 1, heat_color(t));
      }
      y += cell_h;
    }
    y += gap;
  }
  return svg.str();
}

}  // namespace ecgx
