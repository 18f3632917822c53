#include "mitunet/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mitunet {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

ConfusionCounts confusion(const Mask& pred, const Mask& target) {
    pred.validate();
    target.validate();
    check(pred.height == target.height && pred.width == target.width,
          "confusion: mask extents differ");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.bits.size(); ++i) {
        bool p = pred.bits[i], g = target.bits[i];
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricReport MetricReport::from(const ConfusionCounts& c) {
    check(c.total() > 0, "metrics: empty confusion");
    auto pct = [](double num, double den) { return den > 0 ? 100.0 * num / den : 100.0; };
    MetricReport r;
    r.confusion = c;
    r.precision = pct(double(c.tp), double(c.tp + c.fp));
    r.recall = pct(double(c.tp), double(c.tp + c.fn));
    r.accuracy = pct(double(c.tp + c.tn), double(c.total()));
    r.iou_wall = pct(double(c.tp), double(c.tp + c.fp + c.fn));
    r.iou_background = pct(double(c.tn), double(c.tn + c.fp + c.fn));
    r.miou = (r.iou_wall + r.iou_background) / 2.0;
    return r;
}

void TrainConfig::validate() const {
    check(split > 0 && split < 1, "train config: split must be in (0,1)");
    check(sched_patience >= 1, "train config: patience must be >= 1");
    check(sched_factor > 0 && sched_factor < 1, "train config: factor must be in (0,1)");
    check(epochs >= 0 && batch >= 1 && repeats >= 1, "train config: non-positive loop extents");
    check(lr >= 0, "train config: negative learning rate");
    check(input_side >= 32 && input_side % 32 == 0,
          "train config: input side must be a positive multiple of 32");
    (void)ModelConfig::preset(preset);  // rejects unknown preset names
    loss.validate();
    aug.validate();
}

// ---------------------------------------------------------------------------
// Adam / plateau
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const NamedTensors<float>& params, double beta1, double beta2,
                             double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params) {
        m_.emplace_back(size_t(t.size()), 0.0);
        v_.emplace_back(size_t(t.size()), 0.0);
    }
}

void AdamOptimizer::step(NamedTensors<float>& params, double lr) {
    check(params.size() == m_.size(), "adam: parameter list changed size");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, double(t_));
    double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t p = 0; p < params.size(); ++p) {
        auto& t = params[p].second;
        auto& grad = t.node()->grad;
        if (grad.empty()) continue;
        check(grad.size() == t.data().size(), "adam: gradient/parameter extent mismatch");
        for (size_t i = 0; i < grad.size(); ++i) {
            double g = double(grad[i]);
            m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
            v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
            double mhat = m_[p][i] / bc1;
            double vhat = v_[p][i] / bc2;
            t.data()[i] = float(double(t.data()[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, long patience)
    : lr_(lr), factor_(factor), patience_(patience),
      best_(-std::numeric_limits<double>::infinity()) {
    check(lr >= 0 && factor > 0 && factor < 1 && patience >= 1, "plateau: bad configuration");
}

double PlateauScheduler::observe(double metric) {
    if (metric > best_) {
        best_ = metric;
        num_bad_ = 0;
    } else {
        ++num_bad_;
        if (num_bad_ > patience_) {
            lr_ *= factor_;
            num_bad_ = 0;
        }
    }
    return lr_;
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

std::pair<std::vector<long>, std::vector<long>> split_dataset(long n, double ratio,
                                                              uint64_t seed) {
    check(n >= 2, "split_dataset: need at least two samples");
    check(ratio > 0 && ratio < 1, "split_dataset: ratio must be in (0,1)");
    std::vector<long> idx(size_t(n), 0L);
    std::iota(idx.begin(), idx.end(), 0L);
    Rng rng(seed);
    rng.shuffle(idx);
    long n_train = std::clamp(long(std::floor(double(n) * ratio)), 1L, n - 1);
    std::vector<long> train(idx.begin(), idx.begin() + n_train);
    std::vector<long> val(idx.begin() + n_train, idx.end());
    return {train, val};
}

Tensor<float> mask_to_target(const Mask& m) {
    m.validate();
    std::vector<float> t(m.bits.size(), 0.f);
    for (size_t i = 0; i < t.size(); ++i) t[i] = float(m.bits[i]);
    return Tensor<float>::from({1, m.height, m.width}, std::move(t));
}

namespace {

Sample sized_sample(const PlanSample& p, long side) {
    Sample s{p.image, p.wall};
    if (s.image.height != side || s.image.width != side) s = resize_to_training(s, side);
    return s;
}

// [N,3,S,S] batch plus [N,S,S] targets from dataset rows; augmentation seeds
// derive from (run seed, epoch, dataset index) so runs are reproducible.
std::pair<Tensor<float>, Tensor<float>> make_batch(const SynthDataset& ds,
                                                   const std::vector<long>& rows,
                                                   const TrainConfig& cfg, uint64_t run_seed,
                                                   long epoch, bool augmented) {
    long side = cfg.input_side;
    long n = long(rows.size());
    std::vector<float> xs(size_t(n * 3 * side * side), 0.f);
    std::vector<float> ys(size_t(n * side * side), 0.f);
    for (long b = 0; b < n; ++b) {
        Sample s = sized_sample(ds.samples[size_t(rows[size_t(b)])], side);
        if (augmented) {
            uint64_t aseed = Rng::derive(run_seed, uint64_t(epoch) * 1000003u +
                                                       uint64_t(rows[size_t(b)]));
            s = augment_pipeline(s, cfg.aug, aseed);
        }
        Tensor<float> x = normalize(s.image, cfg.aug);
        std::copy(x.data().begin(), x.data().end(), xs.begin() + b * 3 * side * side);
        for (long i = 0; i < side * side; ++i)
            ys[size_t(b * side * side + i)] = float(s.mask.bits[size_t(i)]);
    }
    return {Tensor<float>::from({n, 3, side, side}, std::move(xs)),
            Tensor<float>::from({n, side, side}, std::move(ys))};
}

Mask logits_to_mask(const Tensor<float>& logits, long row) {
    long h = logits.dim(2), w = logits.dim(3);
    Mask m = Mask::zeros(h, w);
    const auto& d = logits.data();
    long base = row * 2 * h * w;
    for (long i = 0; i < h * w; ++i)
        m.bits[size_t(i)] = d[size_t(base + h * w + i)] > d[size_t(base + i)] ? 1 : 0;
    return m;
}

RunResult run_once(const TrainConfig& cfg, const SynthDataset& ds, uint64_t run_seed,
                   const Checkpoint* base) {
    auto [train_idx, val_idx] = split_dataset(long(ds.samples.size()), cfg.split, cfg.seed);
    check(!train_idx.empty(), "train: empty train split");

    MitUNet<float> model(ModelConfig::preset(cfg.preset), run_seed);
    if (base) base->apply(model);
    AdamOptimizer opt(model.parameters());
    PlateauScheduler sched(cfg.lr, cfg.sched_factor, cfg.sched_patience);

    RunResult run;
    double best_miou = -1;
    Rng order_rng(Rng::derive(run_seed, 0xba7c4));
    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<long> order = train_idx;
        order_rng.shuffle(order);
        double loss_sum = 0;
        long seen = 0;
        for (size_t off = 0; off < order.size(); off += size_t(cfg.batch)) {
            std::vector<long> rows(order.begin() + long(off),
                                   order.begin() + std::min(off + size_t(cfg.batch), order.size()));
            auto [x, y] = make_batch(ds, rows, cfg, run_seed, epoch, cfg.augment);
            for (auto& [name, t] : model.parameters()) t.zero_grad();
            Tensor<float> logits = model.forward(x, true);
            Tensor<float> loss = segmentation_loss(cfg.loss, logits, y);
            backward(loss);
            opt.step(model.parameters(), sched.lr());
            model.step += 1;
            loss_sum += double(loss.item()) * double(rows.size());
            seen += long(rows.size());
        }
        MetricReport val = evaluate(model, ds, val_idx, cfg);
        double lr_after = sched.observe(val.miou);
        run.history.push_back({epoch, seen ? loss_sum / double(seen) : 0.0, val, lr_after});
        if (val.miou > best_miou) {
            best_miou = val.miou;
            run.best_epoch = epoch;
            run.best = val;
            run.best_checkpoint = Checkpoint::from_model(model);
        }
    }
    if (cfg.epochs == 0) {
        // evaluation-only: report the (possibly loaded) model as-is
        run.best_epoch = 0;
        run.best = evaluate(model, ds, val_idx, cfg);
        run.best_checkpoint = Checkpoint::from_model(model);
    }
    return run;
}

TrainResult run_repeated(const TrainConfig& cfg, const SynthDataset& ds, const Checkpoint* base) {
    cfg.validate();
    check(!ds.samples.empty(), "train: empty dataset");
    TrainResult res;
    MetricReport mean{};
    for (long r = 0; r < cfg.repeats; ++r) {
        uint64_t run_seed = r == 0 ? cfg.seed : Rng::derive(cfg.seed, uint64_t(r));
        RunResult run = run_once(cfg, ds, run_seed, base);
        mean.recall += run.best.recall;
        mean.precision += run.best.precision;
        mean.accuracy += run.best.accuracy;
        mean.miou += run.best.miou;
        mean.iou_background += run.best.iou_background;
        mean.iou_wall += run.best.iou_wall;
        res.runs.push_back(std::move(run));
    }
    double n = double(cfg.repeats);
    mean.recall /= n;
    mean.precision /= n;
    mean.accuracy /= n;
    mean.miou /= n;
    mean.iou_background /= n;
    mean.iou_wall /= n;
    mean.confusion = res.runs.front().best.confusion;
    res.mean_best = mean;
    return res;
}

}  // namespace

MetricReport evaluate(MitUNet<float>& model, const SynthDataset& ds,
                      const std::vector<long>& indices, const TrainConfig& cfg) {
    check(!indices.empty(), "evaluate: empty index set");
    NoGradGuard ng;
    ConfusionCounts total;
    for (long idx : indices) {
        Sample s = sized_sample(ds.samples[size_t(idx)], cfg.input_side);
        Tensor<float> x = reshape(normalize(s.image, cfg.aug), {1, 3, cfg.input_side,
                                                                cfg.input_side});
        Tensor<float> logits = model.forward(x, false);
        ConfusionCounts c = confusion(logits_to_mask(logits, 0), s.mask);
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn += c.fn;
        total.tn += c.tn;
    }
    return MetricReport::from(total);
}

TrainResult train(const TrainConfig& cfg, const SynthDataset& ds) {
    return run_repeated(cfg, ds, nullptr);
}

TrainResult finetune(const Checkpoint& base, const TrainConfig& cfg, const SynthDataset& ds) {
    check(base.preset == cfg.preset,
          "finetune: checkpoint preset '" + base.preset + "' does not match configured '" +
              cfg.preset + "'");
    return run_repeated(cfg, ds, &base);
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    check(x.size() == y.size() && x.size() >= 2, "spearman: need two paired sequences");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<long> order(v.size(), 0L);
        std::iota(order.begin(), order.end(), 0L);
        std::stable_sort(order.begin(), order.end(),
                         [&](long a, long b) { return v[size_t(a)] < v[size_t(b)]; });
        std::vector<double> r(v.size(), 0.0);
        for (size_t i = 0; i < order.size(); ++i) r[size_t(order[i])] = double(i);
        return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    double n = double(x.size());
    double d2 = 0;
    for (size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

AblationResult ablate_tversky(const std::vector<double>& alphas, const TrainConfig& cfg,
                              const SynthDataset& ds) {
    check(alphas.size() >= 2, "ablate: need at least two alpha values");
    AblationResult res;
    std::vector<double> precs, recs, as;
    for (double a : alphas) {
        TrainConfig c = cfg;
        c.loss.variant = LossVariant::tversky;
        c.loss.alpha = a;
        c.loss.beta = 1.0 - a;
        TrainResult tr = train(c, ds);
        res.rows.push_back({a, 1.0 - a, tr.mean_best});
        as.push_back(a);
        precs.push_back(tr.mean_best.precision);
        recs.push_back(tr.mean_best.recall);
    }
    res.precision_rho = spearman_rho(as, precs);
    res.recall_rho = spearman_rho(as, recs);
    auto inversions = [](const std::vector<double>& v, bool increasing) {
        long n = 0;
        for (size_t i = 1; i < v.size(); ++i)
            if (increasing ? v[i] < v[i - 1] : v[i] > v[i - 1]) ++n;
        return n;
    };
    res.precision_inversions = inversions(precs, true);
    res.recall_inversions = inversions(recs, false);
    res.trend_ok = res.precision_rho > 0 && res.recall_rho < 0 &&
                   res.precision_inversions <= 1 && res.recall_inversions <= 1;
    return res;
}

std::string history_to_string(const RunResult& run) {
    std::ostringstream os;
    char buf[256];
    for (const auto& e : run.history) {
        std::snprintf(buf, sizeof buf,
                      "epoch=%ld train_loss=%.6f recall=%.4f precision=%.4f accuracy=%.4f "
                      "miou=%.4f iou_wall=%.4f lr=%.8g\n",
                      e.epoch, e.train_loss, e.val.recall, e.val.precision, e.val.accuracy,
                      e.val.miou, e.val.iou_wall, e.lr);
        os << buf;
    }
    return os.str();
}

void write_history(const std::string& path, const RunResult& run) {
    std::ofstream os(path);
    check(bool(os), "history: cannot open '" + path + "' for writing");
    os << history_to_string(run);
    check(bool(os), "history: write to '" + path + "' failed");
}

}  // namespace mitunet
