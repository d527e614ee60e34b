#pragma once

// Built-in baseline learner (multinomial logistic regression on block-pooled
// 8-bit patches, plain mini-batch SGD) and the trainer session contract that
// both it and external trainers implement.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/labels.hpp"
#include "smalldata/metrics.hpp"
#include "smalldata/preprocess.hpp"
#include "smalldata/rng.hpp"

namespace smalldata {

inline constexpr std::array<int, 4> kAllowedBatchSizes{16, 32, 64, 128};

struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("train config: learning_rate must be finite and > 0");
        }
        if (std::find(kAllowedBatchSizes.begin(), kAllowedBatchSizes.end(), batch_size) == kAllowedBatchSizes.end()) {
            throw ConfigError("train config: batch_size " + std::to_string(batch_size) +
                              " not in {16, 32, 64, 128}");
        }
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.value("seed", std::uint64_t{0});
}

/// Dense row-major feature rows of a fixed width.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(std::size_t cols) : cols_(cols) {}
    FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data) : cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols) {
            throw DimensionError("feature matrix: data size does not match rows x cols");
        }
    }

    std::size_t rows() const noexcept { return cols_ == 0 ? 0 : data_.size() / cols_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

    void push_back(std::span<const double> features) {
        if (cols_ == 0 && data_.empty()) {
            cols_ = features.size();
        }
        if (features.size() != cols_) {
            throw DimensionError("feature matrix: row has " + std::to_string(features.size()) + " features, expected " +
                                 std::to_string(cols_));
        }
        data_.insert(data_.end(), features.begin(), features.end());
    }

    void reserve(std::size_t rows) { data_.reserve(rows * cols_); }

private:
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Non-overlapping block-mean pooling, scaled to [0, 1].
inline std::vector<double> featurize(const GrayPatch8& g, int pool_factor) {
    if (pool_factor < 1 || g.width % pool_factor != 0 || g.height % pool_factor != 0) {
        throw DimensionError("featurize: " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                             " not divisible by pool factor " + std::to_string(pool_factor));
    }
    const int out_w = g.width / pool_factor;
    const int out_h = g.height / pool_factor;
    const double scale = 1.0 / (255.0 * pool_factor * pool_factor);
    std::vector<double> out(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h));
    for (int by = 0; by < out_h; ++by) {
        for (int bx = 0; bx < out_w; ++bx) {
            unsigned sum = 0;
            for (int y = by * pool_factor; y < (by + 1) * pool_factor; ++y) {
                for (int x = bx * pool_factor; x < (bx + 1) * pool_factor; ++x) {
                    sum += g.at(x, y);
                }
            }
            out[static_cast<std::size_t>(by) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(bx)] =
                sum * scale;
        }
    }
    return out;
}

/// Softmax regression parameters, stored flat: weights (features x classes,
/// row-major) followed by one bias per class.
class BaselineModel {
public:
    static constexpr std::size_t kClasses = kNumLabels;

    BaselineModel() = default;
    BaselineModel(std::size_t n_features, int pool_factor = 4, std::uint64_t seed = 0)
        : n_features_(n_features), pool_factor_(pool_factor), seed_(seed),
          params_(n_features * kClasses + kClasses, 0.0) {}

    /// Weights ~ N(0, init_scale^2), zero bias.
    static BaselineModel initialized(std::size_t n_features, std::uint64_t seed, int pool_factor = 4,
                                     double init_scale = 0.01) {
        BaselineModel m(n_features, pool_factor, seed);
        Rng rng(derive_seed(seed, 0x1417));
        std::normal_distribution<double> normal(0.0, init_scale);
        for (std::size_t i = 0; i < n_features * kClasses; ++i) {
            m.params_[i] = normal(rng);
        }
        return m;
    }

    std::size_t n_features() const noexcept { return n_features_; }
    int pool_factor() const noexcept { return pool_factor_; }
    std::uint64_t seed() const noexcept { return seed_; }

    double weight(std::size_t feature, std::size_t cls) const { return params_[feature * kClasses + cls]; }
    double& weight(std::size_t feature, std::size_t cls) { return params_[feature * kClasses + cls]; }
    double bias(std::size_t cls) const { return params_[n_features_ * kClasses + cls]; }
    double& bias(std::size_t cls) { return params_[n_features_ * kClasses + cls]; }

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }

    bool finite() const {
        return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const BaselineModel&, const BaselineModel&) = default;

private:
    std::size_t n_features_ = 0;
    int pool_factor_ = 4;
    std::uint64_t seed_ = 0;
    std::vector<double> params_;
};

using Probabilities = std::array<double, BaselineModel::kClasses>;

namespace detail {

inline Probabilities logits(const BaselineModel& m, std::span<const double> x) {
    Probabilities z{};
    for (std::size_t c = 0; c < BaselineModel::kClasses; ++c) {
        z[c] = m.bias(c);
    }
    const auto params = m.params();
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double xj = x[j];
        const double* w = params.data() + j * BaselineModel::kClasses;
        z[0] += w[0] * xj;
        z[1] += w[1] * xj;
        z[2] += w[2] * xj;
    }
    return z;
}

inline Probabilities softmax(const Probabilities& z) {
    const double top = *std::max_element(z.begin(), z.end());
    Probabilities p{};
    double sum = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        p[c] = std::exp(z[c] - top);
        sum += p[c];
    }
    for (auto& v : p) {
        v /= sum;
    }
    return p;
}

/// Log-softmax of class `cls`, computed stably.
inline double log_prob(const Probabilities& z, std::size_t cls) {
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto v : z) {
        sum += std::exp(v - top);
    }
    return z[cls] - top - std::log(sum);
}

inline void check_dims(const BaselineModel& m, const FeatureMatrix& x) {
    if (x.rows() > 0 && x.cols() != m.n_features()) {
        throw DimensionError("model expects " + std::to_string(m.n_features()) + " features, batch has " +
                             std::to_string(x.cols()));
    }
}

/// Mean cross-entropy over `rows` of x; adds d(loss)/d(params) into grad when
/// grad is non-empty.
inline double accumulate(const BaselineModel& m, const FeatureMatrix& x, std::span<const DefectLabel> y,
                         std::span<const std::size_t> rows, std::span<double> grad) {
    constexpr std::size_t K = BaselineModel::kClasses;
    const double inv = 1.0 / static_cast<double>(rows.size());
    const std::size_t bias_at = m.n_features() * K;
    double loss = 0.0;
    for (auto r : rows) {
        const auto xr = x.row(r);
        const auto z = logits(m, xr);
        const auto cls = label_index(y[r]);
        loss -= log_prob(z, cls);
        if (grad.empty()) {
            continue;
        }
        auto d = softmax(z); // dL/dz = p - onehot
        d[cls] -= 1.0;
        for (auto& v : d) {
            v *= inv;
        }
        for (std::size_t j = 0; j < xr.size(); ++j) {
            double* g = grad.data() + j * K;
            g[0] += d[0] * xr[j];
            g[1] += d[1] * xr[j];
            g[2] += d[2] * xr[j];
        }
        for (std::size_t c = 0; c < K; ++c) {
            grad[bias_at + c] += d[c];
        }
    }
    return loss * inv;
}

} // namespace detail

/// One probability row per input row.
inline std::vector<Probabilities> forward(const BaselineModel& m, const FeatureMatrix& x) {
    detail::check_dims(m, x);
    std::vector<Probabilities> out;
    out.reserve(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        out.push_back(detail::softmax(detail::logits(m, x.row(i))));
    }
    return out;
}

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad; // same layout as BaselineModel::params()
};

inline LossAndGrad loss_and_grad(const BaselineModel& m, const FeatureMatrix& x, std::span<const DefectLabel> y) {
    detail::check_dims(m, x);
    if (x.rows() == 0) {
        throw DimensionError("loss_and_grad: empty batch");
    }
    if (y.size() != x.rows()) {
        throw DimensionError("loss_and_grad: " + std::to_string(x.rows()) + " rows vs " + std::to_string(y.size()) +
                             " labels");
    }
    std::vector<std::size_t> rows(x.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    LossAndGrad out;
    out.grad.assign(m.params().size(), 0.0);
    out.loss = detail::accumulate(m, x, y, rows, out.grad);
    return out;
}

inline double mean_loss(const BaselineModel& m, const FeatureMatrix& x, std::span<const DefectLabel> y) {
    detail::check_dims(m, x);
    if (x.rows() == 0) {
        throw DimensionError("mean_loss: empty batch");
    }
    std::vector<std::size_t> rows(x.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return detail::accumulate(m, x, y, rows, {});
}

/// Argmax label of a probability row; ties go to the lowest class index.
inline DefectLabel argmax_label(const Probabilities& p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.size(); ++c) {
        if (p[c] > p[best]) {
            best = c;
        }
    }
    return label_from_index(best);
}

inline std::vector<DefectLabel> predict(const BaselineModel& m, const FeatureMatrix& x) {
    detail::check_dims(m, x);
    std::vector<DefectLabel> out;
    out.reserve(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        // argmax of the logits equals argmax of the softmax
        out.push_back(argmax_label(detail::logits(m, x.row(i))));
    }
    return out;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_param = 0;
};

/// Analytic gradient vs central differences over every parameter. Relative
/// error is |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult gradient_check(const BaselineModel& m, const FeatureMatrix& x, std::span<const DefectLabel> y,
                                      double eps = 1e-5) {
    const auto analytic = loss_and_grad(m, x, y).grad;
    BaselineModel probe = m;
    GradCheckResult out;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double saved = probe.params()[i];
        probe.params()[i] = saved + eps;
        const double up = mean_loss(probe, x, y);
        probe.params()[i] = saved - eps;
        const double down = mean_loss(probe, x, y);
        probe.params()[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > out.max_relative_error) {
            out.max_relative_error = rel;
            out.worst_param = i;
        }
    }
    return out;
}

/// `draws` random (model, batch) pairs; returns the worst relative error seen.
inline GradCheckResult random_gradient_checks(int draws, std::uint64_t seed, std::size_t n_features = 950,
                                              std::size_t batch = 4, double eps = 1e-5) {
    GradCheckResult worst;
    for (int d = 0; d < draws; ++d) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d)));
        BaselineModel m = BaselineModel::initialized(n_features, rng(), 4, 0.1);
        std::normal_distribution<double> bias(0.0, 0.5);
        for (std::size_t c = 0; c < BaselineModel::kClasses; ++c) {
            m.bias(c) = bias(rng);
        }
        FeatureMatrix x(n_features);
        std::vector<DefectLabel> y;
        std::vector<double> row(n_features);
        for (std::size_t r = 0; r < batch; ++r) {
            for (auto& v : row) {
                v = uniform01(rng);
            }
            x.push_back(row);
            y.push_back(label_from_index(uniform_index(rng, kNumLabels)));
        }
        const auto res = gradient_check(m, x, y, eps);
        if (res.max_relative_error >= worst.max_relative_error) {
            worst = res;
        }
    }
    return worst;
}

// Trainer session contract ----------------------------------------------------

/// A resumable training session. train() returns eval-split macro-F1 after
/// the requested number of additional epochs. pause() yields a token from
/// which resume() restores the exact learning state, possibly in a different
/// handle.
class TrainerHandle {
public:
    virtual ~TrainerHandle() = default;

    virtual void init(const TrainConfig& config) = 0;
    virtual double train(int epochs) = 0;
    virtual EvalReport evaluate_test() = 0;
    virtual std::string pause() = 0;
    virtual void resume(const std::string& token) = 0;
    virtual void shutdown() = 0;
};

using TrainerFactory = std::function<std::unique_ptr<TrainerHandle>()>;

struct LabeledFeatures {
    FeatureMatrix x;
    std::vector<DefectLabel> y;
    std::vector<std::string> ids;

    std::size_t size() const noexcept { return y.size(); }

    void add(std::string id, DefectLabel label, std::span<const double> features) {
        x.push_back(features);
        y.push_back(label);
        ids.push_back(std::move(id));
    }
};

struct LearnerData {
    LabeledFeatures train;
    LabeledFeatures eval;
    LabeledFeatures test;
    int pool_factor = 4;
};

class BaselineTrainer final : public TrainerHandle {
public:
    static constexpr int kCheckpointVersion = 1;

    explicit BaselineTrainer(std::shared_ptr<const LearnerData> data) : data_(std::move(data)) {
        if (!data_) {
            throw TrainerError("baseline trainer: no data");
        }
    }

    void init(const TrainConfig& config) override {
        config.validate();
        ensure_open();
        config_ = config;
        model_ = BaselineModel::initialized(feature_count(), config.seed, data_->pool_factor);
        epoch_ = 0;
        initialized_ = true;
    }

    double train(int epochs) override {
        ensure_ready();
        if (epochs < 0) {
            throw TrainerError("baseline trainer: negative epoch count");
        }
        for (int e = 0; e < epochs; ++e) {
            run_epoch();
        }
        return eval_metric();
    }

    EvalReport evaluate_test() override {
        ensure_ready();
        return report_on(data_->test);
    }

    std::string pause() override {
        ensure_ready();
        nlohmann::json j = {{"format", "smalldata-baseline"},
                            {"version", kCheckpointVersion},
                            {"config", config_},
                            {"epoch", epoch_},
                            {"pool_factor", model_.pool_factor()},
                            {"n_features", model_.n_features()},
                            {"params", std::vector<double>(model_.params().begin(), model_.params().end())}};
        return j.dump();
    }

    void resume(const std::string& token) override {
        ensure_open();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(token);
        } catch (const nlohmann::json::exception& e) {
            throw TrainerError(std::string("baseline trainer: malformed checkpoint: ") + e.what());
        }
        if (j.value("format", "") != "smalldata-baseline" || j.value("version", 0) != kCheckpointVersion) {
            throw TrainerError("baseline trainer: unsupported checkpoint format");
        }
        const auto n_features = j.at("n_features").get<std::size_t>();
        if (n_features != feature_count()) {
            throw TrainerError("baseline trainer: checkpoint has " + std::to_string(n_features) +
                               " features, data has " + std::to_string(feature_count()));
        }
        const auto params = j.at("params").get<std::vector<double>>();
        config_ = j.at("config").get<TrainConfig>();
        config_.validate();
        model_ = BaselineModel(n_features, j.at("pool_factor").get<int>(), config_.seed);
        if (params.size() != model_.params().size()) {
            throw TrainerError("baseline trainer: checkpoint parameter count mismatch");
        }
        std::copy(params.begin(), params.end(), model_.params().begin());
        epoch_ = j.at("epoch").get<int>();
        initialized_ = true;
    }

    void shutdown() override {
        closed_ = true;
        initialized_ = false;
    }

    const BaselineModel& model() const noexcept { return model_; }
    int epoch() const noexcept { return epoch_; }
    const TrainConfig& config() const noexcept { return config_; }

    double training_loss() const {
        return mean_loss(model_, data_->train.x, data_->train.y);
    }

    double eval_metric() const {
        if (data_->eval.size() == 0) {
            return 0.0;
        }
        return report_on(data_->eval).macro_f1;
    }

private:
    std::size_t feature_count() const {
        for (const auto* part : {&data_->train, &data_->eval, &data_->test}) {
            if (part->size() > 0) {
                return part->x.cols();
            }
        }
        throw TrainerError("baseline trainer: data has no rows");
    }

    void ensure_open() const {
        if (closed_) {
            throw TrainerError("baseline trainer: handle is shut down");
        }
    }

    void ensure_ready() const {
        ensure_open();
        if (!initialized_) {
            throw TrainerError("baseline trainer: not initialized");
        }
    }

    // Shuffle order depends only on (seed, epoch number), so a resumed session
    // replays exactly the updates of an uninterrupted one.
    void run_epoch() {
        const auto& train = data_->train;
        if (train.size() == 0) {
            throw TrainerError("baseline trainer: empty training set");
        }
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config_.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch_)));
        shuffle(std::span<std::size_t>(order), rng);

        std::vector<double> grad(model_.params().size());
        const auto batch = static_cast<std::size_t>(config_.batch_size);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const auto rows = std::span<const std::size_t>(order).subspan(start, std::min(batch, order.size() - start));
            std::fill(grad.begin(), grad.end(), 0.0);
            detail::accumulate(model_, train.x, train.y, rows, grad);
            auto params = model_.params();
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i] -= config_.learning_rate * grad[i];
            }
        }
        ++epoch_;
    }

    EvalReport report_on(const LabeledFeatures& part) const {
        const auto preds = predict(model_, part.x);
        return evaluate(confusion(part.y, preds));
    }

    std::shared_ptr<const LearnerData> data_;
    TrainConfig config_{};
    BaselineModel model_;
    int epoch_ = 0;
    bool initialized_ = false;
    bool closed_ = false;
};

} // namespace smalldata
