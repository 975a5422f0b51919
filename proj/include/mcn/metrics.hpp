#pragma once

#include <string>
#include <vector>

#include "mcn/tasks.hpp"

namespace mcn {

double mse_metric(const Tensor& a, const Tensor& b);
// Peak 2.0 (the [-1,1] range); capped at 120 dB for identical inputs.
double psnr_metric(const Tensor& a, const Tensor& b);
// 7x7 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=2, mean over all
// centers with a full window. These constants are pinned; changing them
// invalidates stored reports.
double ssim_metric(const Tensor& a, const Tensor& b);
// IoU of map supports (values above background, threshold -0.995). Two empty
// supports count as a perfect match.
double edge_iou(const Tensor& map_a, const Tensor& map_b);

// Perceptual distance from a fixed, seeded, untrained conv feature stack
// (three stride-2 convs, silu, global average pooling): 1 - cosine
// similarity, in [0, 2]. Symmetric, zero for identical inputs, 2 when a
// feature vector vanishes.
class PerceptualProxy {
  public:
    explicit PerceptualProxy(uint64_t seed);
    double distance(const Tensor& a, const Tensor& b) const;
    std::vector<double> features(const Tensor& image) const;  // exposed for tests

  private:
    ParamSet weights_;
};

struct SampleMetrics {
    double mse = 0, psnr = 0, ssim = 0, edge_iou = 0, perceptual = 0;
};

struct MetricsReport {
    std::string method;
    std::string task;
    int n = 0;
    std::vector<SampleMetrics> samples;
    SampleMetrics mean;
    std::string config_hash;
    std::string checkpoint_id;
};

MetricsReport summarize(std::string method, std::string task, std::vector<SampleMetrics> samples,
                        std::string config_hash, std::string checkpoint_id);

// Samples one image per held-out test item conditioned on its control map
// and scores it against the reference target.
MetricsReport control_fidelity(const ModelFn& model, const TaskSpec& task, const Dataset& ds,
                               int n, uint64_t seed, const NoiseSchedule& sched,
                               const PerceptualProxy& proxy, const std::string& method,
                               const std::string& config_hash, const std::string& checkpoint_id);

struct ComparisonTable {
    std::vector<std::string> tasks;    // sorted
    std::vector<std::string> methods;  // input order
    // cell(metric, method, task) -> mean value; metrics: perceptual, edge_iou
    std::vector<std::vector<double>> perceptual;  // [method][task]
    std::vector<std::vector<double>> iou;

    std::string to_csv() const;
    std::string to_text() const;
};

ComparisonTable compare_report(const std::vector<MetricsReport>& reports);
ComparisonTable parse_comparison_csv(const std::string& csv);

void write_report_csv(const std::string& path, const MetricsReport& report);
MetricsReport read_report_csv(const std::string& path);

}  // namespace mcn
