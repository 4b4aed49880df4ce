#include "ovadet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ovadet/errors.hpp"

namespace ovadet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kReportFormat = 1;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write on " + path.string());
}

void write_png(const fs::path& path, const cv::Mat& canvas) {
  if (!cv::imwrite(path.string(), canvas)) throw IoError("cannot write " + path.string());
}

std::string fmt_double(double v, const char* spec) {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

cv::Mat render_histogram(const Histogram& h, const std::string& title, const std::string& xlabel) {
  constexpr int kW = 720, kH = 440, kLeft = 70, kRight = 20, kTop = 50, kBottom = 70;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar black(0, 0, 0);
  const int plot_w = kW - kLeft - kRight;
  const int plot_h = kH - kTop - kBottom;
  cv::putText(canvas, title, {kLeft, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.7, black, 2, cv::LINE_AA);
  cv::rectangle(canvas, {kLeft, kTop}, {kLeft + plot_w, kTop + plot_h}, black, 1);
  cv::putText(canvas, xlabel, {kLeft + plot_w / 2 - 40, kH - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
  for (int t = 0; t <= 10; t += 2) {
    const int x = kLeft + plot_w * t / 10;
    cv::line(canvas, {x, kTop + plot_h}, {x, kTop + plot_h + 5}, black, 1);
    cv::putText(canvas, fmt_double(t / 10.0, "%.1f"), {x - 12, kTop + plot_h + 22}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                black, 1, cv::LINE_AA);
  }

  const std::size_t peak = h.counts.empty() ? 0 : *std::max_element(h.counts.begin(), h.counts.end());
  if (peak == 0) {
    cv::putText(canvas, "no data", {kLeft + plot_w / 2 - 50, kTop + plot_h / 2}, cv::FONT_HERSHEY_SIMPLEX, 1.0,
                cv::Scalar(80, 80, 80), 2, cv::LINE_AA);
    return canvas;
  }
  cv::putText(canvas, std::to_string(peak), {8, kTop + 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1, cv::LINE_AA);
  const auto bins = static_cast<int>(h.counts.size());
  for (int b = 0; b < bins; ++b) {
    const int x0 = kLeft + plot_w * b / bins;
    const int x1 = kLeft + plot_w * (b + 1) / bins;
    const int bar = static_cast<int>(std::lround(static_cast<double>(h.counts[static_cast<std::size_t>(b)]) /
                                                 static_cast<double>(peak) * (plot_h - 10)));
    if (bar == 0) continue;
    cv::rectangle(canvas, {x0 + 1, kTop + plot_h - bar}, {x1 - 1, kTop + plot_h - 1}, cv::Scalar(180, 119, 31), cv::FILLED);
  }
  return canvas;
}

cv::Mat render_confusion(const ConfusionMatrix& m) {
  constexpr int kCell = 48, kLeft = 60, kTop = 70;
  const int size = kCell * kNumClasses;
  cv::Mat canvas(kTop + size + 60, kLeft + size + 20, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar black(0, 0, 0);
  cv::putText(canvas, "Confusion matrix (rows: true, cols: predicted)", {10, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.6, black,
              1, cv::LINE_AA);
  std::size_t total = 0;
  for (const auto& row : m) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
  for (int r = 0; r < kNumClasses; ++r) {
    const auto& row = m[static_cast<std::size_t>(r)];
    const std::size_t row_sum = std::accumulate(row.begin(), row.end(), std::size_t{0});
    cv::putText(canvas, std::to_string(r), {kLeft - 30, kTop + r * kCell + kCell / 2 + 5}, cv::FONT_HERSHEY_SIMPLEX,
                0.5, black, 1, cv::LINE_AA);
    cv::putText(canvas, std::to_string(r), {kLeft + r * kCell + kCell / 2 - 8, kTop - 10}, cv::FONT_HERSHEY_SIMPLEX,
                0.5, black, 1, cv::LINE_AA);
    for (int c = 0; c < kNumClasses; ++c) {
      const std::size_t v = row[static_cast<std::size_t>(c)];
      const double frac = row_sum > 0 ? static_cast<double>(v) / static_cast<double>(row_sum) : 0.0;
      const auto shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
      const cv::Point tl(kLeft + c * kCell, kTop + r * kCell);
      cv::rectangle(canvas, tl, tl + cv::Point(kCell, kCell), cv::Scalar(255, shade, shade), cv::FILLED);
      cv::rectangle(canvas, tl, tl + cv::Point(kCell, kCell), cv::Scalar(200, 200, 200), 1);
      if (v > 0) {
        cv::putText(canvas, std::to_string(v), tl + cv::Point(6, kCell / 2 + 5), cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    frac > 0.6 ? cv::Scalar(255, 255, 255) : black, 1, cv::LINE_AA);
      }
    }
  }
  if (total == 0) {
    cv::putText(canvas, "no data", {kLeft + size / 2 - 50, kTop + size / 2}, cv::FONT_HERSHEY_SIMPLEX, 1.0,
                cv::Scalar(80, 80, 80), 2, cv::LINE_AA);
  }
  return canvas;
}

}  // namespace

std::vector<MatchResult> match_detections(const std::string& image_id, std::span<const FinalPrediction> preds,
                                          std::span<const Annotation> gts, double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });

  std::vector<MatchResult> results(gts.size());
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t g = 0; g < gts.size(); ++g) results[g].image_id = image_id;

  for (std::size_t pi : order) {
    const auto& p = preds[pi];
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(p.box, gts[g].box);
      if (!taken[g]) {
        if (v > best) {
          best = v;
          best_g = g;
        }
        // Remember the closest miss for unmatched reporting.
        results[g].iou = std::max(results[g].iou, v);
      }
    }
    if (best_g == gts.size() || best < iou_threshold) continue;
    taken[best_g] = true;
    auto& r = results[best_g];
    r.matched = true;
    r.iou = best;
    r.pred_label = p.label;
    r.true_label = gts[best_g].category;
    r.pred_confidence = p.confidence;
  }
  return results;
}

Histogram Histogram::of(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(clamped * static_cast<double>(bins)));
    ++h.counts[b];
  }
  return h;
}

std::size_t Histogram::total() const noexcept { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

EvaluationReport build_report(std::span<const MatchResult> matches, std::size_t bins) {
  EvaluationReport r;
  std::vector<double> ious;
  std::vector<double> confidences;
  std::set<std::string> images;
  std::set<std::string> images_with_match;
  for (const auto& m : matches) {
    images.insert(m.image_id);
    if (!m.matched) {
      ++r.misdetections;
      continue;
    }
    if (!m.pred_label || !m.true_label) throw ContractError("matched result without labels");
    images_with_match.insert(m.image_id);
    ++r.matched;
    ious.push_back(m.iou);
    confidences.push_back(m.pred_confidence);
    ++r.confusion[static_cast<std::size_t>(m.true_label->value())][static_cast<std::size_t>(m.pred_label->value())];
  }
  r.total_images = images.size();
  r.total_objects = matches.size();
  r.misdetected_images = images.size() - images_with_match.size();
  r.iou_histogram = Histogram::of(ious, bins);
  r.confidence_histogram = Histogram::of(confidences, bins);

  std::size_t trace = 0;
  for (int k = 0; k < kNumClasses; ++k) trace += r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
  if (r.matched == 0) return r;

  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.matched);
  r.accuracy_with_misdetections = static_cast<double>(trace) / static_cast<double>(r.matched + r.misdetections);
  r.micro_f1 = r.accuracy;

  double f1_sum = 0.0;
  int active = 0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(kNumClasses); ++k) {
    std::size_t row = 0;
    std::size_t col = 0;
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumClasses); ++j) {
      row += r.confusion[k][j];
      col += r.confusion[j][k];
    }
    const auto tp = static_cast<double>(r.confusion[k][k]);
    r.support[k] = row;
    r.precision[k] = col > 0 ? tp / static_cast<double>(col) : 0.0;
    r.recall[k] = row > 0 ? tp / static_cast<double>(row) : 0.0;
    const double pr = r.precision[k] + r.recall[k];
    r.f1[k] = pr > 0.0 ? 2.0 * r.precision[k] * r.recall[k] / pr : 0.0;
    if (row > 0 || col > 0) {
      f1_sum += r.f1[k];
      ++active;
    }
  }
  r.macro_f1 = f1_sum / active;
  return r;
}

json report_to_json(const EvaluationReport& r) {
  json per_class = json::array();
  for (std::size_t k = 0; k < static_cast<std::size_t>(kNumClasses); ++k) {
    per_class.push_back({{"id", k},
                         {"name", std::string(category_names()[k])},
                         {"precision", r.precision[k]},
                         {"recall", r.recall[k]},
                         {"f1", r.f1[k]},
                         {"support", r.support[k]}});
  }
  return {{"format_version", kReportFormat},
          {"iou_histogram", {{"range", {0.0, 1.0}}, {"counts", r.iou_histogram.counts}}},
          {"confidence_histogram", {{"range", {0.0, 1.0}}, {"counts", r.confidence_histogram.counts}}},
          {"confusion", r.confusion},
          {"accuracy", optional_json(r.accuracy)},
          {"accuracy_defined", r.accuracy.has_value()},
          {"accuracy_with_misdetections", optional_json(r.accuracy_with_misdetections)},
          {"macro_f1", optional_json(r.macro_f1)},
          {"micro_f1", optional_json(r.micro_f1)},
          {"per_class", per_class},
          {"matched", r.matched},
          {"misdetections", r.misdetections},
          {"misdetected_images", r.misdetected_images},
          {"total_images", r.total_images},
          {"total_objects", r.total_objects}};
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& name : category_names()) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out << category_names()[r];
    for (std::size_t v : m[r]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void export_plots(const EvaluationReport& report, const fs::path& out_dir, const json& extra) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

  json doc = report_to_json(report);
  for (const auto& [k, v] : extra.items()) doc[k] = v;
  write_text(out_dir / "report.json", doc.dump(2) + "\n");
  write_text(out_dir / "confusion_matrix.csv", confusion_csv(report.confusion));
  const std::string subject = extra.value("histogram", "matched") == "all" ? "all predictions" : "matched detections";
  write_png(out_dir / "iou_hist.png", render_histogram(report.iou_histogram, "IOU of " + subject, "IOU"));
  write_png(out_dir / "confidence_hist.png",
            render_histogram(report.confidence_histogram, "Confidence of " + subject, "confidence"));
  write_png(out_dir / "confusion_matrix.png", render_confusion(report.confusion));
}

}  // namespace ovadet
