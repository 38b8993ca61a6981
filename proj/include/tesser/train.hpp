#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tesser/cnn.hpp"
#include "tesser/dataset.hpp"
#include "tesser/errors.hpp"
#include "tesser/kernels.hpp"
#include "tesser/rng.hpp"
#include "tesser/vit.hpp"

namespace tesser {

namespace detail {

template <typename Params, typename ForEach>
std::vector<Tensor*> tensor_list(Params& p, ForEach&& fe) {
    std::vector<Tensor*> out;
    fe(p, [&out](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

struct SgdState {
    std::vector<Tensor*> params, grads, velocity;
    double momentum = 0.9;

    void zero_grads() {
        for (Tensor* g : grads) g->zero();
    }

    void step(double lr, double inv_batch) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            Tensor& g = *grads[i];
            Tensor& v = *velocity[i];
            for (std::size_t j = 0; j < p.data.size(); ++j) {
                v.data[j] = momentum * v.data[j] + g.data[j] * inv_batch;
                p.data[j] -= lr * v.data[j];
            }
        }
    }
};

}  // namespace detail

// Mean cross-entropy over dataset indices [start, start+count).
inline double eval_loss(const ViTParams& p, const DatasetSpec& spec,
                        std::int64_t start, std::int64_t count) {
    ForwardTrace trace;
    double total = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        Sample s = make_sample(spec, start + i);
        vit_forward(p, s.x, trace);
        total += cross_entropy(trace.logits.ptr(), p.arch.classes, s.label);
    }
    return total / static_cast<double>(count);
}

inline double eval_loss(const CnnParams& p, const DatasetSpec& spec,
                        std::int64_t start, std::int64_t count) {
    CnnTrace trace;
    double total = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        Sample s = make_sample(spec, start + i);
        cnn_forward(p, s.x, trace);
        total += cross_entropy(trace.logits.ptr(), p.arch.classes, s.label);
    }
    return total / static_cast<double>(count);
}

// Accuracy over dataset indices [start, start+count).
inline double eval_accuracy(const ViTParams& p, const DatasetSpec& spec,
                            std::int64_t start, std::int64_t count) {
    ForwardTrace trace;
    std::int64_t hit = 0;
    for (std::int64_t i = 0; i < count; ++i) {
        Sample s = make_sample(spec, start + i);
        vit_forward(p, s.x, trace);
        if (argmax(trace.logits.ptr(), p.arch.classes) == s.label) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(count);
}

inline double eval_accuracy(const CnnParams& p, const DatasetSpec& spec,
                            std::int64_t start, std::int64_t count) {
    CnnTrace trace;
    std::int64_t hit = 0;
    for (std::int64_t i = 0; i < count; ++i) {
        Sample s = make_sample(spec, start + i);
        cnn_forward(p, s.x, trace);
        if (argmax(trace.logits.ptr(), p.arch.classes) == s.label) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(count);
}

// Mini-batch SGD with momentum 0.9 over the procedural dataset. Identical
// (spec, epochs, lr, seed) reproduce bitwise-identical parameters. Throws
// TrainingFailure (with the epoch index) if the loss leaves the finite range.
// lr_decay < 1 shrinks the learning rate geometrically per epoch.
// Returns the epoch snapshot with the highest held-out accuracy (evaluated on
// dataset indices [count, count+256) after every epoch, earliest epoch wins
// ties), so one bad final epoch cannot degrade the returned model.
inline ViTParams train_vit(const ViTArch& arch, const DatasetSpec& spec, int epochs,
                           double lr, std::uint64_t seed, int batch = 16,
                           std::vector<double>* step_losses = nullptr, double lr_decay = 1.0) {
    require(spec.count > 0, "train_vit: dataset must be nonempty");
    require(epochs >= 0 && batch > 0 && lr > 0, "train_vit: bad hyperparameters");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "train_vit: lr_decay must lie in (0,1]");
    ViTParams p = vit_init(arch, Rng(seed, 0));
    if (epochs == 0) return p;

    std::vector<Sample> data = make_dataset(spec);
    ViTGrads g = vit_zero_grads(arch);
    ViTGrads v = vit_zero_grads(arch);
    detail::SgdState sgd;
    sgd.params = detail::tensor_list(p, [](auto& q, auto&& fn) { vit_for_each_tensor(q, fn); });
    sgd.grads = detail::tensor_list(static_cast<ViTParams&>(g), [](auto& q, auto&& fn) { vit_for_each_tensor(q, fn); });
    sgd.velocity = detail::tensor_list(static_cast<ViTParams&>(v), [](auto& q, auto&& fn) { vit_for_each_tensor(q, fn); });

    Rng shuffle_rng(seed, 1);
    std::vector<std::int64_t> order(data.size());
    ForwardTrace trace;
    Tensor dlogits({arch.classes});

    ViTParams best = p;
    double best_acc = -1.0;
    double lr_e = lr;
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
        Rng er = shuffle_rng.split(static_cast<std::uint64_t>(e));
        shuffle_indices(order, er);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            sgd.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = data[static_cast<std::size_t>(order[i])];
                vit_forward(p, s.x, trace);
                batch_loss += cross_entropy(trace.logits.ptr(), arch.classes, s.label);
                cross_entropy_grad(trace.logits.ptr(), arch.classes, s.label, dlogits.ptr());
                vit_backward(trace, p, dlogits, {}, &g, &s.x);
            }
            batch_loss /= static_cast<double>(end - start);
            if (!std::isfinite(batch_loss))
                throw TrainingFailure("train_vit: loss became non-finite", e);
            if (step_losses) step_losses->push_back(batch_loss);
            sgd.step(lr_e, 1.0 / static_cast<double>(end - start));
        }
        lr_e *= lr_decay;
        double acc = eval_accuracy(p, spec, spec.count, 256);
        if (acc > best_acc) {
            best_acc = acc;
            best = p;
        }
    }
    return best;
}

// Same contract and best-epoch selection as train_vit.
inline CnnParams train_cnn(const CnnArch& arch, const DatasetSpec& spec, int epochs,
                           double lr, std::uint64_t seed, int batch = 16,
                           std::vector<double>* step_losses = nullptr, double lr_decay = 1.0) {
    require(spec.count > 0, "train_cnn: dataset must be nonempty");
    require(epochs >= 0 && batch > 0 && lr > 0, "train_cnn: bad hyperparameters");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "train_cnn: lr_decay must lie in (0,1]");
    CnnParams p = cnn_init(arch, Rng(seed, 0));
    if (epochs == 0) return p;

    std::vector<Sample> data = make_dataset(spec);
    CnnGrads g = cnn_zero_grads(arch);
    CnnGrads v = cnn_zero_grads(arch);
    detail::SgdState sgd;
    sgd.params = detail::tensor_list(p, [](auto& q, auto&& fn) { cnn_for_each_tensor(q, fn); });
    sgd.grads = detail::tensor_list(static_cast<CnnParams&>(g), [](auto& q, auto&& fn) { cnn_for_each_tensor(q, fn); });
    sgd.velocity = detail::tensor_list(static_cast<CnnParams&>(v), [](auto& q, auto&& fn) { cnn_for_each_tensor(q, fn); });

    Rng shuffle_rng(seed, 1);
    std::vector<std::int64_t> order(data.size());
    CnnTrace trace;
    Tensor dlogits({arch.classes});

    double lr_e = lr;
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
        Rng er = shuffle_rng.split(static_cast<std::uint64_t>(e));
        shuffle_indices(order, er);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            sgd.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = data[static_cast<std::size_t>(order[i])];
                cnn_forward(p, s.x, trace);
                batch_loss += cross_entropy(trace.logits.ptr(), arch.classes, s.label);
                cross_entropy_grad(trace.logits.ptr(), arch.classes, s.label, dlogits.ptr());
                cnn_backward(trace, p, dlogits, &g, &s.x);
            }
            batch_loss /= static_cast<double>(end - start);
            if (!std::isfinite(batch_loss))
                throw TrainingFailure("train_cnn: loss became non-finite", e);
            if (step_losses) step_losses->push_back(batch_loss);
            sgd.step(lr_e, 1.0 / static_cast<double>(end - start));
        }
        lr_e *= lr_decay;
    }
    return p;
}
}  // namespace tesser

