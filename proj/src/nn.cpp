#include "fedprog/nn.hpp"

#include <cmath>
#include <random>
#include <string>

namespace fedprog {

bool all_finite(std::span<const double> v) noexcept {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

LstmLayerParams LstmLayerParams::zeros(std::size_t d_in, std::size_t hidden) {
    const std::size_t g = kGateCount * hidden;
    return {Tensor2D(g, d_in), Tensor2D(g, hidden), std::vector<double>(g, 0.0),
            std::vector<double>(g, 0.0)};
}

void LstmLayerParams::validate() const {
    const std::size_t l = hidden();
    const std::size_t g = kGateCount * l;
    if (w_ih.rows() != g || w_hh.rows() != g || b_ih.size() != g || b_hh.size() != g) {
        throw ShapeError("LSTM layer blocks disagree: w_ih rows " + std::to_string(w_ih.rows()) +
                         ", w_hh " + std::to_string(w_hh.rows()) + "x" +
                         std::to_string(w_hh.cols()) + ", b_ih " + std::to_string(b_ih.size()) +
                         ", b_hh " + std::to_string(b_hh.size()));
    }
}

DenseLayerParams DenseLayerParams::zeros(std::size_t hidden) {
    return {Tensor2D(1, hidden), std::vector<double>(1, 0.0)};
}

ModelParams ModelParams::zeros(const ModelMeta& meta) {
    return {LstmLayerParams::zeros(meta.d_in, meta.hidden), DenseLayerParams::zeros(meta.hidden),
            meta};
}

void ModelParams::validate() const {
    lstm.validate();
    if (lstm.input_size() != meta.d_in || lstm.hidden() != meta.hidden) {
        throw ShapeError("model meta (d_in " + std::to_string(meta.d_in) + ", hidden " +
                         std::to_string(meta.hidden) + ") does not match LSTM blocks (" +
                         std::to_string(lstm.input_size()) + ", " +
                         std::to_string(lstm.hidden()) + ")");
    }
    if (dense.w.rows() != 1 || dense.w.cols() != meta.hidden || dense.b.size() != 1) {
        throw ShapeError("dense head must be 1x" + std::to_string(meta.hidden) + " with 1 bias");
    }
}

std::size_t ModelParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (auto b : parameter_blocks(*this)) n += b.size();
    return n;
}

std::array<std::span<double>, kBlockCount> parameter_blocks(ModelParams& m) {
    return {m.lstm.w_ih.values(), m.lstm.w_hh.values(), std::span<double>(m.lstm.b_ih),
            std::span<double>(m.lstm.b_hh), m.dense.w.values(), std::span<double>(m.dense.b)};
}

std::array<std::span<const double>, kBlockCount> parameter_blocks(const ModelParams& m) {
    return {m.lstm.w_ih.values(), m.lstm.w_hh.values(), std::span<const double>(m.lstm.b_ih),
            std::span<const double>(m.lstm.b_hh), m.dense.w.values(),
            std::span<const double>(m.dense.b)};
}

ModelParams init_model(std::size_t d_in, std::size_t hidden, std::size_t seq_len,
                       std::uint64_t seed, double forget_bias) {
    if (d_in == 0 || hidden == 0) throw std::invalid_argument("init_model: d_in and hidden must be >= 1");
    ModelParams m = ModelParams::zeros({d_in, hidden, seq_len});
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : m.lstm.w_ih.values()) w = dist(rng);
    for (double& w : m.lstm.w_hh.values()) w = dist(rng);
    for (double& w : m.dense.w.values()) w = dist(rng);
    const std::size_t f0 = static_cast<std::size_t>(Gate::forget) * hidden;
    for (std::size_t l = 0; l < hidden; ++l) m.lstm.b_ih[f0 + l] = forget_bias;
    return m;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Combined bias b_ih + b_hh, computed once per pass.
std::vector<double> combined_bias(const LstmLayerParams& p) {
    std::vector<double> b(p.b_ih.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = p.b_ih[i] + p.b_hh[i];
    return b;
}

void check_input(const LstmLayerParams& p, const Tensor2D& x) {
    if (x.cols() != p.input_size()) {
        throw ShapeError("input has " + std::to_string(x.cols()) + " features, layer expects " +
                         std::to_string(p.input_size()));
    }
    if (x.rows() == 0) throw ShapeError("input sequence is empty");
    if (!x.all_finite()) throw DataQualityError("non-finite value in LSTM input");
}

// One recurrence step. `gates` receives activated gate values, `c` and `h` are updated in
// place from the previous state.
void lstm_step(const LstmLayerParams& p, std::span<const double> bias, std::span<const double> x_t,
               std::span<double> gates, std::span<double> c, std::span<double> h) {
    const std::size_t l_count = p.hidden();
    const std::size_t d_in = p.input_size();
    const std::size_t rows = kGateCount * l_count;
    for (std::size_t r = 0; r < rows; ++r) {
        double a = bias[r];
        const double* wi = p.w_ih.row(r).data();
        for (std::size_t k = 0; k < d_in; ++k) a += wi[k] * x_t[k];
        const double* wh = p.w_hh.row(r).data();
        for (std::size_t k = 0; k < l_count; ++k) a += wh[k] * h[k];
        gates[r] = a;
    }
    for (std::size_t l = 0; l < l_count; ++l) {
        const double in = sigmoid(gates[l]);
        const double forget = sigmoid(gates[l_count + l]);
        const double cand = std::tanh(gates[2 * l_count + l]);
        const double out = sigmoid(gates[3 * l_count + l]);
        gates[l] = in;
        gates[l_count + l] = forget;
        gates[2 * l_count + l] = cand;
        gates[3 * l_count + l] = out;
        c[l] = forget * c[l] + in * cand;
        h[l] = out * std::tanh(c[l]);
    }
}

}  // namespace

LstmTrace lstm_forward(const LstmLayerParams& params, const Tensor2D& x) {
    check_input(params, x);
    const std::size_t t_len = x.rows();
    const std::size_t l_count = params.hidden();
    const auto bias = combined_bias(params);
    LstmTrace tr{Tensor2D(t_len, kGateCount * l_count), Tensor2D(t_len, l_count),
                 Tensor2D(t_len, l_count)};
    std::vector<double> c(l_count, 0.0), h(l_count, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        lstm_step(params, bias, x.row(t), tr.gates.row(t), c, h);
        std::copy(c.begin(), c.end(), tr.cell.row(t).begin());
        std::copy(h.begin(), h.end(), tr.hidden.row(t).begin());
    }
    return tr;
}

std::vector<double> lstm_final_hidden(const LstmLayerParams& params, const Tensor2D& x) {
    check_input(params, x);
    const std::size_t l_count = params.hidden();
    const auto bias = combined_bias(params);
    std::vector<double> gates(kGateCount * l_count), c(l_count, 0.0), h(l_count, 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) lstm_step(params, bias, x.row(t), gates, c, h);
    return h;
}

double dense_forward(const DenseLayerParams& dense, std::span<const double> h) {
    double y = dense.b[0];
    const double* w = dense.w.row(0).data();
    for (std::size_t k = 0; k < h.size(); ++k) y += w[k] * h[k];
    return y;
}

double predict(const ModelParams& model, const Tensor2D& x) {
    if (x.rows() != model.meta.seq_len) {
        throw ShapeError("sequence length " + std::to_string(x.rows()) + " != model seq_len " +
                         std::to_string(model.meta.seq_len));
    }
    const auto h = lstm_final_hidden(model.lstm, x);
    return dense_forward(model.dense, h);
}

double mse_loss(std::span<const double> preds, std::span<const double> labels) {
    if (preds.empty()) throw std::invalid_argument("mse_loss: empty input");
    if (preds.size() != labels.size()) throw ShapeError("mse_loss: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = preds[i] - labels[i];
        s += r * r;
    }
    return s / static_cast<double>(preds.size());
}

namespace {

void check_loss(double loss) {
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss in backward pass");
}

}  // namespace

BackwardResult backward(const ModelParams& model, std::span<const Example> batch, bool lstm_grads) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    const std::size_t l_count = model.meta.hidden;
    const std::size_t d_in = model.meta.d_in;
    const std::size_t rows = kGateCount * l_count;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    BackwardResult out{0.0, ModelParams::zeros(model.meta)};
    Gradients& g = out.grads;
    double* dw_dense = g.dense.w.row(0).data();
    const double* w_dense = model.dense.w.row(0).data();

    std::vector<double> dh(l_count), dc(l_count), da(rows), dh_prev(l_count);
    const std::size_t t_len = batch.front().x->rows();

    for (const Example& ex : batch) {
        if (ex.x->rows() != t_len) throw ShapeError("backward: non-uniform sequence length in batch");
        if (!std::isfinite(ex.target)) throw DataQualityError("non-finite training label");

        // Forward. The final-hidden path is shared with lstm_final_hidden so both give
        // bitwise-identical features.
        LstmTrace tr;
        std::vector<double> h_final;
        if (lstm_grads) {
            tr = lstm_forward(model.lstm, *ex.x);
            h_final.assign(tr.final_hidden().begin(), tr.final_hidden().end());
        } else {
            h_final = lstm_final_hidden(model.lstm, *ex.x);
        }
        const double y_hat = dense_forward(model.dense, h_final);
        const double resid = y_hat - ex.target;
        out.loss += resid * resid;
        const double dy = 2.0 * resid * inv_b;

        for (std::size_t k = 0; k < l_count; ++k) dw_dense[k] += dy * h_final[k];
        g.dense.b[0] += dy;
        if (!lstm_grads) continue;

        for (std::size_t k = 0; k < l_count; ++k) dh[k] = dy * w_dense[k];
        std::fill(dc.begin(), dc.end(), 0.0);

        for (std::size_t t = t_len; t-- > 0;) {
            const auto gates = tr.gates.row(t);
            const auto c_t = tr.cell.row(t);
            for (std::size_t l = 0; l < l_count; ++l) {
                const double in = gates[l];
                const double forget = gates[l_count + l];
                const double cand = gates[2 * l_count + l];
                const double outg = gates[3 * l_count + l];
                const double tc = std::tanh(c_t[l]);
                const double c_prev = t > 0 ? tr.cell(t - 1, l) : 0.0;
                const double d_out = dh[l] * tc;
                const double d_c = dc[l] + dh[l] * outg * (1.0 - tc * tc);
                da[l] = d_c * cand * in * (1.0 - in);
                da[l_count + l] = d_c * c_prev * forget * (1.0 - forget);
                da[2 * l_count + l] = d_c * in * (1.0 - cand * cand);
                da[3 * l_count + l] = d_out * outg * (1.0 - outg);
                dc[l] = d_c * forget;
            }
            const auto x_t = ex.x->row(t);
            std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                const double a = da[r];
                g.lstm.b_ih[r] += a;
                g.lstm.b_hh[r] += a;
                double* gwi = g.lstm.w_ih.row(r).data();
                for (std::size_t k = 0; k < d_in; ++k) gwi[k] += a * x_t[k];
                if (t > 0) {
                    const auto h_prev = tr.hidden.row(t - 1);
                    double* gwh = g.lstm.w_hh.row(r).data();
                    const double* wh = model.lstm.w_hh.row(r).data();
                    for (std::size_t k = 0; k < l_count; ++k) {
                        gwh[k] += a * h_prev[k];
                        dh_prev[k] += a * wh[k];
                    }
                }
            }
            std::swap(dh, dh_prev);
        }
    }
    out.loss *= inv_b;
    check_loss(out.loss);
    return out;
}

BackwardResult backward_dense(const DenseLayerParams& dense, const ModelMeta& meta,
                              std::span<const std::vector<double>* const> features,
                              std::span<const double> targets) {
    if (features.empty()) throw std::invalid_argument("backward_dense: empty batch");
    if (features.size() != targets.size()) throw ShapeError("backward_dense: length mismatch");
    const double inv_b = 1.0 / static_cast<double>(features.size());
    BackwardResult out{0.0, ModelParams::zeros(meta)};
    double* dw_dense = out.grads.dense.w.row(0).data();
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& h = *features[i];
        const double resid = dense_forward(dense, h) - targets[i];
        out.loss += resid * resid;
        const double dy = 2.0 * resid * inv_b;
        for (std::size_t k = 0; k < h.size(); ++k) dw_dense[k] += dy * h[k];
        out.grads.dense.b[0] += dy;
    }
    out.loss *= inv_b;
    check_loss(out.loss);
    return out;
}

double clip_global_norm(Gradients& grads, double max_norm, std::size_t first_layer) {
    auto blocks = parameter_blocks(grads);
    double sq = 0.0;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        if (kBlockLayer[b] < first_layer) continue;
        for (double v : blocks[b]) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (std::size_t b = 0; b < kBlockCount; ++b) {
            if (kBlockLayer[b] < first_layer) continue;
            for (double& v : blocks[b]) v *= s;
        }
    }
    return norm;
}

}  // namespace fedprog
