#include "fedprog/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string_view>

namespace fedprog {

StandardizationStats standardize_fit(std::span<const Tensor2D> blocks) {
    if (blocks.empty()) throw std::invalid_argument("standardize_fit: no data");
    const std::size_t m = blocks.front().cols();
    std::size_t n = 0;
    std::vector<double> sum(m, 0.0);
    for (const auto& b : blocks) {
        if (b.cols() != m) throw ShapeError("standardize_fit: inconsistent feature count");
        if (!b.all_finite()) throw DataQualityError("standardize_fit: non-finite feature value");
        for (std::size_t r = 0; r < b.rows(); ++r) {
            for (std::size_t c = 0; c < m; ++c) sum[c] += b(r, c);
        }
        n += b.rows();
    }
    if (n < 2) throw std::invalid_argument("standardize_fit: need at least 2 samples per feature");
    StandardizationStats st{std::vector<double>(m), std::vector<double>(m, 0.0)};
    for (std::size_t c = 0; c < m; ++c) st.mean[c] = sum[c] / static_cast<double>(n);
    for (const auto& b : blocks) {
        for (std::size_t r = 0; r < b.rows(); ++r) {
            for (std::size_t c = 0; c < m; ++c) {
                const double d = b(r, c) - st.mean[c];
                st.stddev[c] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < m; ++c) {
        st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(n));
        if (!(st.stddev[c] > 0.0)) throw ZeroVarianceError(c);
    }
    return st;
}

Tensor2D standardize_apply(const StandardizationStats& stats, const Tensor2D& features) {
    if (features.cols() != stats.mean.size()) throw ShapeError("standardize_apply: feature count");
    Tensor2D out(features.rows(), features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        for (std::size_t c = 0; c < features.cols(); ++c) {
            out(r, c) = (features(r, c) - stats.mean[c]) / stats.stddev[c];
        }
    }
    return out;
}

Tensor2D standardize_unapply(const StandardizationStats& stats, const Tensor2D& features) {
    if (features.cols() != stats.mean.size()) throw ShapeError("standardize_unapply: feature count");
    Tensor2D out(features.rows(), features.cols());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        for (std::size_t c = 0; c < features.cols(); ++c) {
            out(r, c) = features(r, c) * stats.stddev[c] + stats.mean[c];
        }
    }
    return out;
}

namespace {

Tensor2D tail_rows(const Tensor2D& m, std::size_t n) {
    Tensor2D out(n, m.cols());
    const std::size_t first = m.rows() - n;
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(m.row(first + r).begin(), m.row(first + r).end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

SequenceDataset segment_cycles(std::span<const CyclicRecord> records,
                               std::optional<std::size_t> seq_len) {
    if (records.empty()) throw std::invalid_argument("segment_cycles: no cycles");
    std::size_t shortest = records.front().length();
    for (const auto& r : records) shortest = std::min(shortest, r.length());
    const std::size_t t = seq_len.value_or(shortest);
    if (t == 0) throw InsufficientLengthError("segment_cycles: zero-length window");
    if (t > shortest) {
        throw InsufficientLengthError("segment_cycles: window " + std::to_string(t) +
                                      " exceeds shortest cycle " + std::to_string(shortest));
    }
    SequenceDataset ds;
    ds.seq_len = t;
    ds.windows.reserve(records.size());
    for (const auto& r : records) ds.windows.push_back({tail_rows(r.features, t), r.capacity});
    return ds;
}

SequenceDataset sliding_windows(const EngineRecord& record, std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0) throw std::invalid_argument("sliding_windows: window and stride must be >= 1");
    const std::size_t life = record.lifespan();
    if (life < window) {
        throw InsufficientLengthError("engine " + std::to_string(record.engine_id) + " has " +
                                      std::to_string(life) + " cycles, window needs " +
                                      std::to_string(window));
    }
    if (record.rul_labels.size() != life) throw ShapeError("sliding_windows: label count != lifespan");
    SequenceDataset ds;
    ds.seq_len = window;
    const std::size_t m = record.features.cols();
    for (std::size_t tau = 0; tau + window <= life; tau += stride) {
        Tensor2D x(window, m);
        for (std::size_t r = 0; r < window; ++r) {
            std::copy(record.features.row(tau + r).begin(), record.features.row(tau + r).end(),
                      x.row(r).begin());
        }
        ds.windows.push_back({std::move(x), record.rul_labels[tau + window - 1]});
    }
    return ds;
}

std::vector<double> piecewise_rul_labels(std::size_t lifespan, std::size_t cap) {
    std::vector<double> y(lifespan);
    for (std::size_t t = 1; t <= lifespan; ++t) {
        y[t - 1] = static_cast<double>(std::min(cap, lifespan - t));
    }
    return y;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

double parse_double(std::string_view s, std::size_t line) {
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ParseError("invalid number '" + std::string(s) + "'", line);
    }
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + std::string(s) + "'", line);
    return v;
}

int parse_int(std::string_view s, std::size_t line) {
    s = trim(s);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ParseError("invalid integer '" + std::string(s) + "'", line);
    }
    return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

std::vector<std::string> read_header(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line) || trim(line).empty()) {
        throw ParseError(path.string() + ": empty file", 1);
    }
    std::vector<std::string> cols;
    for (auto f : split_fields(trim(line))) cols.emplace_back(trim(f));
    return cols;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17);
    return out;
}

}  // namespace

std::vector<CyclicRecord> load_cyclic_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    const auto header = read_header(in, path);
    if (header.size() < 5 || header[0] != "client_id" || header[1] != "cycle" || header[2] != "t" ||
        header.back() != "label") {
        throw ParseError("expected header client_id,cycle,t,feat_1..feat_M,label", 1);
    }
    const std::size_t m = header.size() - 4;
    for (std::size_t k = 0; k < m; ++k) {
        if (header[3 + k] != "feat_" + std::to_string(k + 1)) {
            throw ParseError("missing column feat_" + std::to_string(k + 1), 1);
        }
    }

    struct Building {
        CyclicRecord rec;
        std::vector<double> values;
    };
    std::vector<Building> cycles;
    std::map<std::pair<int, int>, std::size_t> index;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        if (f.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(f.size()),
                             line_no);
        }
        const int client = parse_int(f[0], line_no);
        const int cycle = parse_int(f[1], line_no);
        const double t = parse_double(f[2], line_no);
        const double label = parse_double(f.back(), line_no);
        auto [it, inserted] = index.try_emplace({client, cycle}, cycles.size());
        if (inserted) {
            if (!(label > 0.0)) throw ParseError("capacity label must be positive", line_no);
            Building b;
            b.rec.client_id = client;
            b.rec.cycle = cycle;
            b.rec.capacity = label;
            cycles.push_back(std::move(b));
        }
        Building& b = cycles[it->second];
        if (label != b.rec.capacity) throw ParseError("label changes within a cycle", line_no);
        b.rec.timestamps.push_back(t);
        for (std::size_t k = 0; k < m; ++k) b.values.push_back(parse_double(f[3 + k], line_no));
    }
    if (cycles.empty()) throw ParseError(path.string() + ": no data rows", 0);

    std::vector<CyclicRecord> out;
    out.reserve(cycles.size());
    for (auto& b : cycles) {
        const std::size_t rows = b.rec.timestamps.size();
        b.rec.features = Tensor2D(rows, m, std::move(b.values));
        out.push_back(std::move(b.rec));
    }
    return out;
}

namespace {

bool is_dropped_sensor(int s) {
    return std::find(kDroppedSensors.begin(), kDroppedSensors.end(), s) != kDroppedSensors.end();
}

constexpr std::size_t kEngineColumns = 2 + kEngineSettingCount + kEngineSensorCount;

std::vector<std::string> engine_header() {
    std::vector<std::string> h = {"engine_id", "cycle"};
    for (std::size_t i = 1; i <= kEngineSettingCount; ++i) h.push_back("setting_" + std::to_string(i));
    for (std::size_t i = 1; i <= kEngineSensorCount; ++i) h.push_back("sensor_" + std::to_string(i));
    return h;
}

}  // namespace

EngineRecord engine_from_raw(const RawEngine& raw, std::size_t rul_cap) {
    const std::size_t kept = kEngineSensorCount - kDroppedSensors.size();
    if (raw.readings.cols() != kEngineSettingCount + kEngineSensorCount) {
        throw ShapeError("raw engine readings must have 24 columns");
    }
    EngineRecord rec;
    rec.engine_id = raw.engine_id;
    rec.features = Tensor2D(raw.readings.rows(), kept);
    for (std::size_t r = 0; r < raw.readings.rows(); ++r) {
        std::size_t k = 0;
        for (std::size_t s = 1; s <= kEngineSensorCount; ++s) {
            if (is_dropped_sensor(static_cast<int>(s))) continue;
            rec.features(r, k++) = raw.readings(r, kEngineSettingCount + s - 1);
        }
    }
    rec.rul_labels = piecewise_rul_labels(rec.lifespan(), rul_cap);
    return rec;
}

std::vector<EngineRecord> load_engine_csv(const std::filesystem::path& path, std::size_t rul_cap) {
    auto in = open_input(path);
    const auto header = read_header(in, path);
    const auto expected = engine_header();
    if (header.size() != expected.size()) {
        throw ParseError("expected " + std::to_string(expected.size()) + " columns, got " +
                             std::to_string(header.size()),
                         1);
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (header[i] != expected[i]) throw ParseError("missing column " + expected[i], 1);
    }

    std::vector<RawEngine> raws;
    std::vector<std::vector<double>> values;
    std::map<int, std::size_t> index;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(trim(line));
        if (f.size() != kEngineColumns) {
            throw ParseError("expected " + std::to_string(kEngineColumns) + " fields, got " +
                                 std::to_string(f.size()),
                             line_no);
        }
        const int id = parse_int(f[0], line_no);
        const int cycle = parse_int(f[1], line_no);
        auto [it, inserted] = index.try_emplace(id, raws.size());
        if (inserted) {
            raws.push_back({id, {}});
            values.emplace_back();
        }
        auto& v = values[it->second];
        const std::size_t seen = v.size() / (kEngineColumns - 2);
        if (cycle != static_cast<int>(seen) + 1) {
            throw ParseError("engine " + std::to_string(id) + ": expected cycle " +
                                 std::to_string(seen + 1) + ", got " + std::to_string(cycle),
                             line_no);
        }
        for (std::size_t k = 2; k < kEngineColumns; ++k) v.push_back(parse_double(f[k], line_no));
    }
    if (raws.empty()) throw ParseError(path.string() + ": no data rows", 0);

    std::vector<EngineRecord> out;
    out.reserve(raws.size());
    for (std::size_t i = 0; i < raws.size(); ++i) {
        const std::size_t rows = values[i].size() / (kEngineColumns - 2);
        raws[i].readings = Tensor2D(rows, kEngineColumns - 2, std::move(values[i]));
        out.push_back(engine_from_raw(raws[i], rul_cap));
    }
    return out;
}

std::vector<double> load_rul_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::vector<double> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const int v = parse_int(line, line_no);
        if (v < 0) throw ParseError("negative RUL", line_no);
        out.push_back(v);
    }
    if (out.empty()) throw ParseError(path.string() + ": empty RUL file", 0);
    return out;
}

void attach_test_rul(std::vector<EngineRecord>& engines, std::span<const double> final_rul,
                     std::size_t rul_cap) {
    if (engines.size() != final_rul.size()) {
        throw ShapeError("RUL file has " + std::to_string(final_rul.size()) + " entries for " +
                         std::to_string(engines.size()) + " engines");
    }
    const double cap = static_cast<double>(rul_cap);
    for (std::size_t e = 0; e < engines.size(); ++e) {
        auto& rec = engines[e];
        const std::size_t life = rec.lifespan();
        rec.rul_labels.resize(life);
        for (std::size_t t = 0; t < life; ++t) {
            rec.rul_labels[t] = std::min(cap, final_rul[e] + static_cast<double>(life - 1 - t));
        }
    }
}

void write_cyclic_csv(const std::filesystem::path& path, std::span<const CyclicRecord> records) {
    if (records.empty()) throw std::invalid_argument("write_cyclic_csv: no records");
    auto out = open_output(path);
    const std::size_t m = records.front().features.cols();
    out << "client_id,cycle,t";
    for (std::size_t k = 1; k <= m; ++k) out << ",feat_" << k;
    out << ",label\n";
    for (const auto& r : records) {
        for (std::size_t t = 0; t < r.length(); ++t) {
            out << r.client_id << ',' << r.cycle << ',' << r.timestamps[t];
            for (std::size_t k = 0; k < m; ++k) out << ',' << r.features(t, k);
            out << ',' << r.capacity << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_engine_csv(const std::filesystem::path& path, std::span<const RawEngine> engines) {
    auto out = open_output(path);
    const auto header = engine_header();
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& e : engines) {
        for (std::size_t r = 0; r < e.readings.rows(); ++r) {
            out << e.engine_id << ',' << (r + 1);
            for (double v : e.readings.row(r)) out << ',' << v;
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_rul_file(const std::filesystem::path& path, std::span<const double> final_rul) {
    auto out = open_output(path);
    for (double v : final_rul) out << static_cast<long long>(std::llround(v)) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Partitioning

std::size_t lifespan_bucket(std::size_t lifespan, std::span<const std::size_t> boundaries) {
    std::size_t b = 0;
    for (std::size_t k = 0; k < boundaries.size(); ++k) {
        if (k == 0 ? lifespan >= boundaries[k] : lifespan > boundaries[k]) ++b;
    }
    return b;
}

std::vector<std::vector<EngineRecord>> partition_clients(std::vector<EngineRecord> engines,
                                                         PartitionMode mode,
                                                         std::span<const std::size_t> boundaries,
                                                         std::size_t n_clients,
                                                         std::uint64_t seed) {
    for (std::size_t k = 1; k < boundaries.size(); ++k) {
        if (boundaries[k] <= boundaries[k - 1]) {
            throw std::invalid_argument("partition_clients: boundaries must be strictly increasing");
        }
    }
    std::vector<std::vector<EngineRecord>> parts;
    if (mode == PartitionMode::heterogeneous) {
        parts.resize(boundaries.size() + 1);
        for (auto& e : engines) parts[lifespan_bucket(e.lifespan(), boundaries)].push_back(std::move(e));
    } else {
        if (n_clients == 0) throw std::invalid_argument("partition_clients: n_clients must be >= 1");
        std::mt19937_64 rng(seed);
        std::shuffle(engines.begin(), engines.end(), rng);
        parts.resize(n_clients);
        const std::size_t base = engines.size() / n_clients;
        const std::size_t extra = engines.size() % n_clients;
        std::size_t pos = 0;
        for (std::size_t c = 0; c < n_clients; ++c) {
            const std::size_t n = base + (c < extra ? 1 : 0);
            for (std::size_t i = 0; i < n; ++i) parts[c].push_back(std::move(engines[pos++]));
        }
    }
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].empty()) {
            throw std::invalid_argument("partition_clients: bucket " + std::to_string(c) + " is empty");
        }
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Client assembly

namespace {

void standardize_windows(SequenceDataset& ds, const StandardizationStats& st) {
    for (auto& w : ds.windows) w.x = standardize_apply(st, w.x);
    ds.stats = st;
}

}  // namespace

ClientData prepare_cyclic_client(std::span<const CyclicRecord> cycles, std::size_t seq_len,
                                 double train_fraction) {
    if (cycles.size() < 2) throw std::invalid_argument("prepare_cyclic_client: need >= 2 cycles");
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(cycles.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, cycles.size() - 1);

    std::vector<Tensor2D> train_blocks;
    for (std::size_t i = 0; i < n_train; ++i) train_blocks.push_back(cycles[i].features);
    const auto stats = standardize_fit(train_blocks);

    ClientData cd{segment_cycles(cycles.subspan(0, n_train), seq_len),
                  segment_cycles(cycles.subspan(n_train), seq_len)};
    standardize_windows(cd.train, stats);
    standardize_windows(cd.test, stats);
    return cd;
}

ClientData prepare_engine_client(std::span<const EngineRecord> train_engines,
                                 std::span<const EngineRecord> test_engines, std::size_t window,
                                 std::vector<int>* skipped) {
    std::vector<Tensor2D> blocks;
    for (const auto& e : train_engines) blocks.push_back(e.features);
    const auto stats = standardize_fit(blocks);

    ClientData cd;
    cd.train.seq_len = cd.test.seq_len = window;
    for (const auto& e : train_engines) {
        try {
            auto ds = sliding_windows(e, window);
            for (auto& w : ds.windows) cd.train.windows.push_back(std::move(w));
        } catch (const InsufficientLengthError&) {
            if (skipped) skipped->push_back(e.engine_id);
        }
    }
    for (const auto& e : test_engines) {
        if (e.lifespan() < window) {
            if (skipped) skipped->push_back(e.engine_id);
            continue;
        }
        cd.test.windows.push_back({tail_rows(e.features, window), e.rul_labels.back()});
    }
    if (cd.train.empty()) throw InsufficientLengthError("no train engine is long enough for the window");
    standardize_windows(cd.train, stats);
    standardize_windows(cd.test, stats);
    return cd;
}

}  // namespace fedprog
