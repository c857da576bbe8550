#include "fedprog/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedprog {

using nlohmann::json;

namespace {

json flat(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

std::vector<double> read_array(const json& j, const char* key, std::size_t expected) {
    if (!j.contains(key)) throw CheckpointError(std::string("checkpoint: missing key '") + key + "'");
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != expected) {
        throw CheckpointError(std::string("checkpoint: '") + key + "' has " + std::to_string(v.size()) +
                              " values, expected " + std::to_string(expected));
    }
    return v;
}

}  // namespace

std::string checkpoint_to_json(const ModelParams& model, const CheckpointInfo& info) {
    model.validate();
    json j;
    j["version"] = kCheckpointVersion;
    j["task"] = info.task;
    j["d_in"] = model.meta.d_in;
    j["hidden"] = model.meta.hidden;
    j["seq_len"] = model.meta.seq_len;
    j["gate_order"] = std::vector<std::string>(kGateOrder.begin(), kGateOrder.end());
    j["lstm_w_ih"] = flat(model.lstm.w_ih.values());
    j["lstm_w_hh"] = flat(model.lstm.w_hh.values());
    j["lstm_b_ih"] = model.lstm.b_ih;
    j["lstm_b_hh"] = model.lstm.b_hh;
    j["dense_w"] = flat(model.dense.w.values());
    j["dense_b"] = model.dense.b;
    j["round"] = info.round;
    j["seed"] = info.seed;
    j["label_offset"] = info.labels.offset;
    j["label_scale"] = info.labels.scale;
    // nlohmann prints doubles in shortest round-trip form.
    return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CheckpointError("checkpoint: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    try {
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError("checkpoint: version " + std::to_string(version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(kCheckpointVersion) + ")");
        }
        const auto order = j.at("gate_order").get<std::vector<std::string>>();
        if (!std::equal(order.begin(), order.end(), kGateOrder.begin(), kGateOrder.end())) {
            throw CheckpointError("checkpoint: unsupported gate order");
        }
        Checkpoint c;
        c.info.task = j.at("task").get<std::string>();
        c.info.round = j.at("round").get<std::size_t>();
        c.info.seed = j.at("seed").get<std::uint64_t>();
        c.info.labels.offset = j.value("label_offset", 0.0);
        c.info.labels.scale = j.value("label_scale", 1.0);
        ModelMeta meta{j.at("d_in").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                       j.at("seq_len").get<std::size_t>()};
        const std::size_t G = kGateCount * meta.hidden;
        c.model = ModelParams::zeros(meta);
        c.model.lstm.w_ih = Tensor2D(G, meta.d_in, read_array(j, "lstm_w_ih", G * meta.d_in));
        c.model.lstm.w_hh = Tensor2D(G, meta.hidden, read_array(j, "lstm_w_hh", G * meta.hidden));
        c.model.lstm.b_ih = read_array(j, "lstm_b_ih", G);
        c.model.lstm.b_hh = read_array(j, "lstm_b_hh", G);
        c.model.dense.w = Tensor2D(1, meta.hidden, read_array(j, "dense_w", meta.hidden));
        c.model.dense.b = read_array(j, "dense_b", 1);
        c.model.validate();
        return c;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const ModelParams& model, const CheckpointInfo& info,
                     const std::filesystem::path& path) {
    const auto text = checkpoint_to_json(model, info);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << text << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json(ss.str());
}

}  // namespace fedprog
