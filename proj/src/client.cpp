#include "fedprog/client.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

namespace fedprog {

ClientState ClientState::create(int client_id, ModelParams model, SequenceDataset train_windows,
                                LabelScaling labels, std::uint64_t base_seed,
                                const TrainConfig& cfg) {
    ClientState s;
    s.client_id = client_id;
    s.labels = labels;
    s.rng_seed = base_seed + static_cast<std::uint64_t>(client_id);
    s.rng.seed(s.rng_seed);

    const std::size_t n = train_windows.size();
    auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = n > 0 ? n - 1 : 0;
    s.validation.seq_len = train_windows.seq_len;
    s.validation.stats = train_windows.stats;
    s.validation.windows.assign(std::make_move_iterator(train_windows.windows.end() - static_cast<std::ptrdiff_t>(n_val)),
                                std::make_move_iterator(train_windows.windows.end()));
    train_windows.windows.resize(n - n_val);
    s.train = std::move(train_windows);
    s.adopt(std::move(model));
    return s;
}

void ClientState::adopt(ModelParams next) {
    next.validate();
    model = std::move(next);
    optimizer = AdamState::for_model(model, optimizer.cfg);
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::mt19937_64& rng, std::size_t n,
                                                       std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return batches;
}

namespace {

void check_compatible(const ModelParams& model, const SequenceDataset& ds) {
    if (ds.empty()) return;
    if (ds.feature_count() != model.meta.d_in || ds.seq_len != model.meta.seq_len) {
        throw ShapeError("dataset windows (" + std::to_string(ds.seq_len) + "x" +
                         std::to_string(ds.feature_count()) + ") do not match model (" +
                         std::to_string(model.meta.seq_len) + "x" + std::to_string(model.meta.d_in) + ")");
    }
}

std::vector<double> scaled_targets(const SequenceDataset& ds, const LabelScaling& labels) {
    std::vector<double> t(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) t[i] = labels.to_target(ds.windows[i].label);
    return t;
}

TrainReport run_training(ClientState& s, std::size_t first_layer, std::size_t epochs,
                         std::size_t patience, const TrainConfig& cfg) {
    TrainReport rep;
    if (epochs == 0) return rep;
    if (s.train.empty()) throw std::invalid_argument("client " + std::to_string(s.client_id) + ": empty training set");
    check_compatible(s.model, s.train);
    check_compatible(s.model, s.validation);
    s.optimizer.cfg = cfg.adam;

    const bool frozen_lstm = first_layer >= 1;
    const auto train_t = scaled_targets(s.train, s.labels);
    const auto val_t = scaled_targets(s.validation, s.labels);

    // A frozen LSTM turns every window into a fixed feature vector.
    std::vector<std::vector<double>> train_h, val_h;
    if (frozen_lstm) {
        for (const auto& w : s.train.windows) train_h.push_back(lstm_final_hidden(s.model.lstm, w.x));
        for (const auto& w : s.validation.windows) val_h.push_back(lstm_final_hidden(s.model.lstm, w.x));
    }

    auto validation_loss = [&]() {
        double sum = 0.0;
        for (std::size_t i = 0; i < val_t.size(); ++i) {
            const double y = frozen_lstm ? dense_forward(s.model.dense, val_h[i])
                                         : predict(s.model, s.validation.windows[i].x);
            const double r = y - val_t[i];
            sum += r * r;
        }
        return sum / static_cast<double>(val_t.size());
    };

    double best = std::numeric_limits<double>::infinity();
    ModelParams best_model = s.model;
    std::size_t since_best = 0;
    std::vector<Example> examples;
    std::vector<const std::vector<double>*> feats;
    std::vector<double> targets;

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        double loss_sum = 0.0;
        try {
            for (const auto& batch : shuffled_batches(s.rng, s.train.size(), cfg.batch_size)) {
                BackwardResult r;
                if (frozen_lstm) {
                    feats.clear();
                    targets.clear();
                    for (std::size_t i : batch) {
                        feats.push_back(&train_h[i]);
                        targets.push_back(train_t[i]);
                    }
                    r = backward_dense(s.model.dense, s.model.meta, feats, targets);
                } else {
                    examples.clear();
                    for (std::size_t i : batch) examples.push_back({&s.train.windows[i].x, train_t[i]});
                    r = backward(s.model, examples);
                }
                clip_global_norm(r.grads, cfg.clip_norm, first_layer);
                adam_step(s.optimizer, s.model, r.grads, first_layer);
                loss_sum += r.loss * static_cast<double>(batch.size());
            }
        } catch (const TrainingError& e) {
            throw TrainingError("client " + std::to_string(s.client_id) + ", epoch " +
                                std::to_string(epoch) + ": " + e.what());
        }
        const double train_loss = loss_sum / static_cast<double>(s.train.size());
        const double val = val_t.empty() ? train_loss : validation_loss();
        if (!std::isfinite(val)) {
            throw TrainingError("client " + std::to_string(s.client_id) + ", epoch " +
                                std::to_string(epoch) + ": non-finite validation loss");
        }
        rep.train_loss.push_back(train_loss);
        rep.validation_loss.push_back(val);
        if (val < best) {
            best = val;
            best_model = s.model;
            rep.best_epoch = epoch;
            since_best = 0;
        } else if (patience > 0 && ++since_best >= patience) {
            break;
        }
    }
    s.model = std::move(best_model);
    return rep;
}

}  // namespace

TrainReport train_local(ClientState& state, std::size_t epochs, std::size_t patience,
                        const TrainConfig& cfg) {
    return run_training(state, 0, epochs, patience, cfg);
}

TrainReport retrain_frozen_prefix(ClientState& state, std::size_t frozen_layer_count,
                                  std::size_t epochs, std::size_t patience,
                                  const TrainConfig& cfg) {
    if (frozen_layer_count >= kLayerCount) {
        throw std::invalid_argument("retrain_frozen_prefix: freezing " + std::to_string(frozen_layer_count) +
                                    " of " + std::to_string(kLayerCount) + " layers leaves nothing to train");
    }
    return run_training(state, frozen_layer_count, epochs, patience, cfg);
}

std::vector<double> predict_labels(const ModelParams& model, const SequenceDataset& data,
                                   const LabelScaling& labels) {
    check_compatible(model, data);
    std::vector<double> out;
    out.reserve(data.size());
    for (const auto& w : data.windows) out.push_back(labels.to_label(predict(model, w.x)));
    return out;
}

double evaluate_rmse(const ModelParams& model, const SequenceDataset& test,
                     const LabelScaling& labels) {
    if (test.empty()) throw std::invalid_argument("evaluate_rmse: empty test set");
    const auto preds = predict_labels(model, test, labels);
    std::vector<double> truth(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) truth[i] = test.windows[i].label;
    return std::sqrt(mse_loss(preds, truth));
}

Tensor2D dump_feature_extractors(const ModelParams& model, std::span<const Window> windows,
                                 std::span<const std::size_t> neurons) {
    for (std::size_t n : neurons) {
        if (n >= model.meta.hidden) {
            throw std::out_of_range("neuron index " + std::to_string(n) + " >= hidden size " +
                                    std::to_string(model.meta.hidden));
        }
    }
    Tensor2D out(windows.size(), neurons.size());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto h = lstm_final_hidden(model.lstm, windows[w].x);
        for (std::size_t k = 0; k < neurons.size(); ++k) out(w, k) = h[neurons[k]];
    }
    return out;
}

void write_feature_csv(const std::filesystem::path& path, const Tensor2D& activations,
                       std::span<const std::size_t> neurons) {
    if (activations.cols() != neurons.size()) throw ShapeError("write_feature_csv: column count");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17) << "window_index";
    for (std::size_t n : neurons) out << ",neuron_" << n;
    out << '\n';
    for (std::size_t r = 0; r < activations.rows(); ++r) {
        out << r;
        for (double v : activations.row(r)) out << ',' << v;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace fedprog
