#include "mcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace mcn {

double mse_metric(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mse_metric: shape mismatch");
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a.get(i) - b.get(i);
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

double psnr_metric(const Tensor& a, const Tensor& b) {
    double m = mse_metric(a, b);
    if (m < 1e-12) return 120.0;
    return 10.0 * std::log10(4.0 / m);
}

namespace {

std::vector<double> gauss_window7() {
    std::vector<double> k(49);
    double sigma = 1.5, sum = 0;
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            double dy = y - 3, dx = x - 3;
            k[static_cast<size_t>(y) * 7 + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += k[static_cast<size_t>(y) * 7 + x];
        }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace

double ssim_metric(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("ssim_metric: shape mismatch");
    int h = a.dim(a.ndim() - 2), w = a.dim(a.ndim() - 1);
    if (h < 7 || w < 7) throw ShapeError("ssim_metric: image smaller than the 7x7 window");
    static const std::vector<double> win = gauss_window7();
    constexpr double L = 2.0;
    constexpr double c1 = (0.01 * L) * (0.01 * L);
    constexpr double c2 = (0.03 * L) * (0.03 * L);
    double total = 0;
    int count = 0;
    for (int cy = 3; cy < h - 3; ++cy)
        for (int cx = 3; cx < w - 3; ++cx) {
            double ma = 0, mb = 0;
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 7; ++x) {
                    double wgt = win[static_cast<size_t>(y) * 7 + x];
                    ma += wgt * a.get(static_cast<int64_t>(cy + y - 3) * w + (cx + x - 3));
                    mb += wgt * b.get(static_cast<int64_t>(cy + y - 3) * w + (cx + x - 3));
                }
            double va = 0, vb = 0, cov = 0;
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 7; ++x) {
                    double wgt = win[static_cast<size_t>(y) * 7 + x];
                    double da = a.get(static_cast<int64_t>(cy + y - 3) * w + (cx + x - 3)) - ma;
                    double db = b.get(static_cast<int64_t>(cy + y - 3) * w + (cx + x - 3)) - mb;
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            double num = (2 * ma * mb + c1) * (2 * cov + c2);
            double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            ++count;
        }
    return total / count;
}

double edge_iou(const Tensor& map_a, const Tensor& map_b) {
    if (map_a.numel() != map_b.numel()) throw ShapeError("edge_iou: size mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < map_a.numel(); ++i) {
        bool a = map_a.get(i) > -0.995;
        bool b = map_b.get(i) > -0.995;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---- perceptual proxy --------------------------------------------------------

PerceptualProxy::PerceptualProxy(uint64_t seed) {
    Rng root = Rng(seed).fork("perceptual-proxy");
    auto conv = [&](const char* name, int cout, int cin) {
        Rng r = root.fork(name);
        Tensor w = Tensor::randn({cout, cin, 3, 3}, r, DType::F64);
        double s = std::sqrt(2.0 / (cin * 9.0));
        for (int64_t i = 0; i < w.numel(); ++i) w.set(i, w.get(i) * s);
        weights_.insert(std::string(name) + ".w", w);
        weights_.insert(std::string(name) + ".b", Tensor::zeros({cout}, DType::F64));
    };
    conv("c1", 8, 1);
    conv("c2", 16, 8);
    conv("c3", 32, 16);
}

std::vector<double> PerceptualProxy::features(const Tensor& image) const {
    Tensor x = image;
    if (x.ndim() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.ndim() != 4 || x.dim(1) != 1) throw ShapeError("perceptual proxy: expected [1,H,W]");
    if (x.dtype() != DType::F64) x = x.astype(DType::F64);
    x = silu(conv2d(x, weights_.at("c1.w"), weights_.at("c1.b"), 2, 1));
    x = silu(conv2d(x, weights_.at("c2.w"), weights_.at("c2.b"), 2, 1));
    x = silu(conv2d(x, weights_.at("c3.w"), weights_.at("c3.b"), 2, 1));
    const int c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> f(static_cast<size_t>(c), 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int64_t k = 0; k < hw; ++k) s += x.get(static_cast<int64_t>(ch) * hw + k);
        f[static_cast<size_t>(ch)] = s / static_cast<double>(hw);
    }
    return f;
}

double PerceptualProxy::distance(const Tensor& a, const Tensor& b) const {
    if (a.shape() != b.shape()) throw ShapeError("perceptual proxy: shape mismatch");
    if (bitwise_equal(a, b)) return 0.0;
    std::vector<double> fa = features(a), fb = features(b);
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < fa.size(); ++i) {
        dot += fa[i] * fb[i];
        na += fa[i] * fa[i];
        nb += fb[i] * fb[i];
    }
    if (na == 0.0 || nb == 0.0) return 2.0;
    double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(d, 0.0, 2.0);
}

// ---- reports -------------------------------------------------------------------

namespace {

SampleMetrics mean_of(const std::vector<SampleMetrics>& samples) {
    SampleMetrics m;
    if (samples.empty()) return m;
    for (const SampleMetrics& s : samples) {
        m.mse += s.mse;
        m.psnr += s.psnr;
        m.ssim += s.ssim;
        m.edge_iou += s.edge_iou;
        m.perceptual += s.perceptual;
    }
    double n = static_cast<double>(samples.size());
    m.mse /= n;
    m.psnr /= n;
    m.ssim /= n;
    m.edge_iou /= n;
    m.perceptual /= n;
    return m;
}

}  // namespace

MetricsReport summarize(std::string method, std::string task, std::vector<SampleMetrics> samples,
                        std::string config_hash, std::string checkpoint_id) {
    MetricsReport r;
    r.method = std::move(method);
    r.task = std::move(task);
    r.n = static_cast<int>(samples.size());
    r.mean = mean_of(samples);
    r.samples = std::move(samples);
    r.config_hash = std::move(config_hash);
    r.checkpoint_id = std::move(checkpoint_id);
    return r;
}

MetricsReport control_fidelity(const ModelFn& model, const TaskSpec& task, const Dataset& ds,
                               int n, uint64_t seed, const NoiseSchedule& sched,
                               const PerceptualProxy& proxy, const std::string& method,
                               const std::string& config_hash, const std::string& checkpoint_id) {
    if (n < 1) throw ConfigError("control_fidelity: n must be >= 1");
    if (n > ds.test_count())
        throw DataError("control_fidelity: n exceeds test split of " +
                        std::to_string(ds.test_count()));
    const int s = ds.size;
    const int64_t per = static_cast<int64_t>(s) * s;

    std::vector<TaskPair> pairs;
    pairs.reserve(static_cast<size_t>(n));
    Tensor controls = Tensor::zeros({n, 1, s, s}, DType::F32);
    for (int i = 0; i < n; ++i) {
        const ShapeImage& img = ds.images.at(static_cast<size_t>(ds.train_count() + i));
        pairs.push_back(task_pair(img, task.kind));
        for (int64_t k = 0; k < per; ++k) controls.set(i * per + k, pairs.back().control.get(k));
    }

    // One ancestral pass over the whole batch, each row with its own control.
    Tensor generated =
        sample(model, &controls, nullptr, sched, sched.T, n, s, Rng(seed).fork("sampling").state());

    std::vector<SampleMetrics> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor gen = Tensor::zeros({1, s, s}, DType::F32);
        for (int64_t k = 0; k < per; ++k) gen.set(k, generated.get(i * per + k));
        ShapeImage gen_img;
        gen_img.pixels = gen;
        SampleMetrics sm;
        sm.mse = mse_metric(gen, pairs[static_cast<size_t>(i)].target);
        sm.psnr = psnr_metric(gen, pairs[static_cast<size_t>(i)].target);
        sm.ssim = ssim_metric(gen, pairs[static_cast<size_t>(i)].target);
        sm.perceptual = proxy.distance(gen, pairs[static_cast<size_t>(i)].target);
        Tensor gen_map;
        try {
            gen_map = control_map(gen_img, task.kind);
            sm.edge_iou = edge_iou(pairs[static_cast<size_t>(i)].control, gen_map);
        } catch (const DataError&) {
            sm.edge_iou = 0.0;  // degenerate sample (e.g. all background for skeletons)
        }
        samples.push_back(sm);
    }
    return summarize(method, task.name, std::move(samples), config_hash, checkpoint_id);
}

// ---- comparison ------------------------------------------------------------------

ComparisonTable compare_report(const std::vector<MetricsReport>& reports) {
    if (reports.size() < 2) throw ConfigError("compare_report: need at least 2 reports");
    // method -> task -> report
    std::map<std::string, std::map<std::string, const MetricsReport*>> by_method;
    std::vector<std::string> method_order;
    for (const MetricsReport& r : reports) {
        if (!by_method.count(r.method)) method_order.push_back(r.method);
        by_method[r.method][r.task] = &r;
    }
    std::vector<std::string> tasks;
    for (const auto& [task, r] : by_method.at(method_order.front())) tasks.push_back(task);
    for (const auto& [method, m] : by_method) {
        std::vector<std::string> t;
        for (const auto& [task, r] : m) t.push_back(task);
        if (t != tasks)
            throw DataError("compare_report: method '" + method + "' covers a different task set");
    }

    ComparisonTable tab;
    tab.tasks = tasks;
    tab.methods = method_order;
    for (const std::string& method : method_order) {
        std::vector<double> prow, irow;
        for (const std::string& task : tasks) {
            const MetricsReport* r = by_method[method][task];
            prow.push_back(r->mean.perceptual);
            irow.push_back(r->mean.edge_iou);
        }
        tab.perceptual.push_back(prow);
        tab.iou.push_back(irow);
    }
    return tab;
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    char buf[64];
    os << "metric,method";
    for (const std::string& t : tasks) os << "," << t;
    os << "\n";
    auto rows = [&](const char* metric, const std::vector<std::vector<double>>& m) {
        for (size_t i = 0; i < methods.size(); ++i) {
            os << metric << "," << methods[i];
            for (double v : m[i]) {
                std::snprintf(buf, sizeof(buf), ",%.9g", v);
                os << buf;
            }
            os << "\n";
        }
    };
    rows("perceptual", perceptual);
    rows("edge_iou", iou);
    return os.str();
}

std::string ComparisonTable::to_text() const {
    std::ostringstream os;
    char buf[96];
    auto block = [&](const char* title, const std::vector<std::vector<double>>& m, bool lower) {
        os << title << (lower ? "  (lower is better)" : "  (higher is better)") << "\n";
        os << "  method";
        for (const std::string& t : tasks) {
            std::snprintf(buf, sizeof(buf), "  %20s", t.c_str());
            os << buf;
        }
        os << "\n";
        for (size_t i = 0; i < methods.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "  %-24s", methods[i].c_str());
            os << buf;
            for (size_t j = 0; j < tasks.size(); ++j) {
                if (i == 0)
                    std::snprintf(buf, sizeof(buf), "  %12.4f        ", m[i][j]);
                else
                    std::snprintf(buf, sizeof(buf), "  %12.4f (%+.3f)", m[i][j], m[i][j] - m[0][j]);
                os << buf;
            }
            os << "\n";
        }
        os << "\n";
    };
    block("perceptual distance", perceptual, true);
    block("edge IoU", iou, false);
    return os.str();
}

ComparisonTable parse_comparison_csv(const std::string& csv) {
    ComparisonTable tab;
    std::istringstream ss(csv);
    std::string line;
    if (!std::getline(ss, line)) throw DataError("comparison csv: empty");
    {
        std::istringstream hs(line);
        std::string cell;
        std::getline(hs, cell, ',');  // metric
        std::getline(hs, cell, ',');  // method
        while (std::getline(hs, cell, ',')) tab.tasks.push_back(cell);
    }
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::istringstream rs(line);
        std::string metric, method, cell;
        std::getline(rs, metric, ',');
        std::getline(rs, method, ',');
        std::vector<double> vals;
        while (std::getline(rs, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != tab.tasks.size()) throw DataError("comparison csv: ragged row");
        if (metric == "perceptual") {
            tab.methods.push_back(method);
            tab.perceptual.push_back(vals);
        } else if (metric == "edge_iou") {
            tab.iou.push_back(vals);
        } else {
            throw DataError("comparison csv: unknown metric '" + metric + "'");
        }
    }
    return tab;
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report '" + path + "'");
    out << "#method=" << report.method << "\n#task=" << report.task << "\n#n=" << report.n
        << "\n#config_hash=" << report.config_hash << "\n#checkpoint=" << report.checkpoint_id
        << "\n";
    out << "sample,mse,psnr,ssim,edge_iou,perceptual\n";
    char buf[200];
    for (size_t i = 0; i < report.samples.size(); ++i) {
        const SampleMetrics& s = report.samples[i];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, s.mse, s.psnr, s.ssim,
                      s.edge_iou, s.perceptual);
        out << buf;
    }
    const SampleMetrics& m = report.mean;
    std::snprintf(buf, sizeof(buf), "mean,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.mse, m.psnr, m.ssim,
                  m.edge_iou, m.perceptual);
    out << buf;
}

MetricsReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read report '" + path + "'");
    MetricsReport r;
    std::string line;
    std::vector<SampleMetrics> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto eq = line.find('=');
            std::string key = line.substr(1, eq - 1), val = line.substr(eq + 1);
            if (key == "method") r.method = val;
            else if (key == "task") r.task = val;
            else if (key == "n") r.n = std::stoi(val);
            else if (key == "config_hash") r.config_hash = val;
            else if (key == "checkpoint") r.checkpoint_id = val;
            continue;
        }
        if (line.rfind("sample,", 0) == 0) continue;
        std::istringstream rs(line);
        std::string tag;
        std::getline(rs, tag, ',');
        SampleMetrics s;
        char comma;
        rs >> s.mse >> comma >> s.psnr >> comma >> s.ssim >> comma >> s.edge_iou >> comma >>
            s.perceptual;
        if (tag == "mean")
            r.mean = s;
        else
            samples.push_back(s);
    }
    r.samples = std::move(samples);
    return r;
}

}  // namespace mcn
