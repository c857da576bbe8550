#include "fedprog/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fedprog {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

constexpr std::uint64_t kCyclicTag = 0xC1C;
constexpr std::uint64_t kEngineTag = 0xE61;
constexpr std::uint64_t kSensorTag = 0x5E5;
constexpr std::uint64_t kTruncTag = 0x7C7;

}  // namespace

std::vector<std::vector<CyclicRecord>> gen_synthetic_cyclic(const SyntheticCyclicConfig& cfg) {
    if (cfg.n_clients == 0 || cfg.cycles_per_client == 0 || cfg.nominal_cycle_length < 4) {
        throw std::invalid_argument("gen_synthetic_cyclic: counts must be >= 1");
    }
    std::vector<std::vector<CyclicRecord>> clients(cfg.n_clients);
    const double n_cycles = static_cast<double>(cfg.cycles_per_client);
    const double t_nom = static_cast<double>(cfg.nominal_cycle_length);

    for (std::size_t j = 0; j < cfg.n_clients; ++j) {
        auto rng = stream(cfg.seed, kCyclicTag, j);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const double spread =
            cfg.n_clients > 1 ? -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(cfg.n_clients - 1) : 0.0;
        const double rate = cfg.fade_per_cycle * (1.0 + cfg.heterogeneity * spread) *
                            std::exp(0.05 * gauss(rng));
        const double c0 = cfg.initial_capacity * (1.0 + 0.01 * gauss(rng));
        const int regen_period = std::uniform_int_distribution<int>(8, 14)(rng);
        const double regen_amp = std::uniform_real_distribution<double>(0.02, 0.05)(rng);

        for (std::size_t s = 0; s < cfg.cycles_per_client; ++s) {
            const double sd = static_cast<double>(s);
            double cap = c0 - rate * sd * (1.0 + 0.3 * sd / n_cycles);
            if (s >= static_cast<std::size_t>(regen_period)) {
                const double since = static_cast<double>(s % regen_period);
                cap += regen_amp * std::exp(-since / 3.0);
            }
            cap += 0.004 * gauss(rng);
            cap = std::max(cap, 0.1 * cfg.rated_capacity);

            const auto len = static_cast<std::size_t>(
                std::max(4.0, std::round(t_nom * cap / cfg.rated_capacity)));
            const double aging = std::max(0.0, 1.0 - cap / cfg.rated_capacity);
            CyclicRecord rec;
            rec.client_id = static_cast<int>(j);
            rec.cycle = static_cast<int>(s) + 1;
            rec.capacity = cap;
            rec.features = Tensor2D(len, 2);
            rec.timestamps.resize(len);
            for (std::size_t t = 0; t < len; ++t) {
                const double td = static_cast<double>(t);
                const double depth = td / static_cast<double>(len - 1);
                rec.timestamps[t] = 10.0 * td;
                rec.features(t, 0) = 4.2 - 0.15 * aging - 0.7 * depth - 0.9 * std::pow(depth, 8) +
                                     0.005 * gauss(rng);
                rec.features(t, 1) = 24.0 + 9.0 * (td / t_nom) * (1.0 + 0.8 * aging) +
                                     0.05 * gauss(rng);
            }
            clients[j].push_back(std::move(rec));
        }
    }
    return clients;
}

std::vector<SyntheticEngine> gen_synthetic_noncyclic(const SyntheticEngineConfig& cfg) {
    if (cfg.n_engines == 0 || cfg.lifespan_min < 3 || cfg.lifespan_max < cfg.lifespan_min) {
        throw std::invalid_argument("gen_synthetic_noncyclic: invalid counts or lifespan range");
    }
    if (!(cfg.knee_fraction > 0.0 && cfg.knee_fraction < 1.0)) {
        throw std::invalid_argument("gen_synthetic_noncyclic: knee_fraction must be in (0, 1)");
    }
    // Fleet-wide sensor characteristics.
    auto srng = stream(cfg.seed, kSensorTag, 0);
    std::uniform_real_distribution<double> base_dist(10.0, 600.0);
    std::uniform_real_distribution<double> sens_dist(0.01, 0.04);
    std::vector<double> base(kEngineSensorCount), slope(kEngineSensorCount), noise(kEngineSensorCount);
    for (std::size_t k = 0; k < kEngineSensorCount; ++k) {
        base[k] = base_dist(srng);
        const double sign = (srng() & 1) ? 1.0 : -1.0;
        slope[k] = sign * sens_dist(srng) * base[k];
        noise[k] = 0.002 * base[k];
    }
    auto dropped = [](std::size_t s1) {
        return std::find(kDroppedSensors.begin(), kDroppedSensors.end(), static_cast<int>(s1)) !=
               kDroppedSensors.end();
    };

    std::vector<SyntheticEngine> out;
    out.reserve(cfg.n_engines);
    for (std::size_t e = 0; e < cfg.n_engines; ++e) {
        auto rng = stream(cfg.seed, kEngineTag, e);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::size_t life = std::uniform_int_distribution<std::size_t>(cfg.lifespan_min, cfg.lifespan_max)(rng);
        const double jitter = std::uniform_real_distribution<double>(0.8, 1.2)(rng);
        const auto knee = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(cfg.knee_fraction * jitter * static_cast<double>(life))), 1,
            life - 2);

        SyntheticEngine eng;
        eng.knee = knee;
        eng.raw.engine_id = cfg.first_id + static_cast<int>(e);
        eng.raw.readings = Tensor2D(life, kEngineSettingCount + kEngineSensorCount);
        std::vector<double> offset(kEngineSensorCount);
        for (std::size_t k = 0; k < kEngineSensorCount; ++k) offset[k] = 0.003 * base[k] * gauss(rng);
        for (std::size_t t = 0; t < life; ++t) {
            const double deg = t < knee ? 0.0
                                        : std::pow(static_cast<double>(t - knee) /
                                                       static_cast<double>(life - 1 - knee),
                                                   1.5);
            eng.raw.readings(t, 0) = 0.002 * gauss(rng);
            eng.raw.readings(t, 1) = 0.0003 * gauss(rng);
            eng.raw.readings(t, 2) = 100.0;
            for (std::size_t k = 0; k < kEngineSensorCount; ++k) {
                double v = base[k];
                if (!dropped(k + 1)) v += offset[k] + slope[k] * deg + noise[k] * gauss(rng);
                eng.raw.readings(t, kEngineSettingCount + k) = v;
            }
        }
        out.push_back(std::move(eng));
    }
    return out;
}

std::vector<double> truncate_for_test(std::vector<SyntheticEngine>& engines,
                                      std::size_t min_observed, std::uint64_t seed) {
    std::vector<double> rul;
    rul.reserve(engines.size());
    for (std::size_t e = 0; e < engines.size(); ++e) {
        auto& raw = engines[e].raw;
        const std::size_t life = raw.readings.rows();
        auto rng = stream(seed, kTruncTag, e);
        const std::size_t lo = std::min(life - 1, std::max(min_observed, life * 3 / 10));
        const std::size_t observed = std::uniform_int_distribution<std::size_t>(lo, life - 1)(rng);
        Tensor2D cut(observed, raw.readings.cols());
        std::copy_n(raw.readings.values().begin(), observed * raw.readings.cols(), cut.values().begin());
        raw.readings = std::move(cut);
        rul.push_back(static_cast<double>(life - observed));
    }
    return rul;
}

}  // namespace fedprog
