#include "fogseg/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fogseg/rng.hpp"

namespace fs = std::filesystem;

namespace fogseg {

void Trial::validate() const {
    const std::size_t t_len = labels.size();
    if (markers.empty()) throw ValidationError("trial " + trial_id + ": no markers");
    if (positions.size() != markers.size() * t_len * 3)
        throw ValidationError("trial " + trial_id + ": position buffer has " +
                              std::to_string(positions.size()) + " values, expected " +
                              std::to_string(markers.size() * t_len * 3));
    for (real_t v : positions)
        if (!std::isfinite(v))
            throw ValidationError("trial " + trial_id + ": non-finite marker position");
    for (int y : labels)
        if (y != kClassFg && y != kClassFog)
            throw ValidationError("trial " + trial_id + ": label " + std::to_string(y) +
                                  " is not 0/1");
    for (std::size_t i = 0; i < markers.size(); ++i)
        for (std::size_t j = i + 1; j < markers.size(); ++j)
            if (markers[i] == markers[j])
                throw ValidationError("trial " + trial_id + ": duplicate marker '" + markers[i] +
                                      "'");
    if (sample_rate <= 0)
        throw ValidationError("trial " + trial_id + ": sample_rate must be positive");
}

namespace {

std::string format_real(real_t v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

real_t parse_real(const std::string& s, const std::string& path, int line) {
    real_t v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ValidationError(path + ":" + std::to_string(line) + ": bad number '" + s + "'");
    return v;
}

long parse_long(const std::string& s, const std::string& path, int line) {
    long v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ValidationError(path + ":" + std::to_string(line) + ": bad integer '" + s + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string sidecar_path(const std::string& csv_path) {
    fs::path p(csv_path);
    p.replace_extension(".json");
    return p.string();
}

}  // namespace

Trial load_trial(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ValidationError("cannot open trial file: " + csv_path);

    Trial trial;
    std::string line;
    int lineno = 0;

    if (!std::getline(in, line)) throw ValidationError(csv_path + ":1: empty file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.size() < 5 || header.front() != "sample" || header.back() != "label")
        throw ValidationError(csv_path + ":1: header must be sample,<M>_x,<M>_y,<M>_z,...,label");
    if ((header.size() - 2) % 3 != 0)
        throw ValidationError(csv_path + ":1: marker columns are not x/y/z triplets");
    const int n = static_cast<int>((header.size() - 2) / 3);
    for (int m = 0; m < n; ++m) {
        const std::string& cx = header[static_cast<std::size_t>(1 + 3 * m)];
        const std::string& cy = header[static_cast<std::size_t>(2 + 3 * m)];
        const std::string& cz = header[static_cast<std::size_t>(3 + 3 * m)];
        if (cx.size() < 3 || cx.substr(cx.size() - 2) != "_x")
            throw ValidationError(csv_path + ":1: expected <name>_x column, got '" + cx + "'");
        const std::string name = cx.substr(0, cx.size() - 2);
        if (cy != name + "_y" || cz != name + "_z")
            throw ValidationError(csv_path + ":1: columns for marker '" + name +
                                  "' are not a contiguous _x,_y,_z triplet");
        trial.markers.push_back(name);
    }

    std::vector<std::vector<real_t>> rows;  // [T] of 3N values
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ValidationError(csv_path + ":" + std::to_string(lineno) + ": " +
                                  std::to_string(cells.size()) + " columns, expected " +
                                  std::to_string(header.size()));
        const long idx = parse_long(cells[0], csv_path, lineno);
        if (idx != static_cast<long>(rows.size()))
            throw ValidationError(csv_path + ":" + std::to_string(lineno) +
                                  ": sample index " + std::to_string(idx) + ", expected " +
                                  std::to_string(rows.size()));
        std::vector<real_t> vals(static_cast<std::size_t>(3 * n));
        for (int i = 0; i < 3 * n; ++i)
            vals[static_cast<std::size_t>(i)] =
                parse_real(cells[static_cast<std::size_t>(1 + i)], csv_path, lineno);
        const long y = parse_long(cells.back(), csv_path, lineno);
        if (y != kClassFg && y != kClassFog)
            throw ValidationError(csv_path + ":" + std::to_string(lineno) + ": label " +
                                  std::to_string(y) + " is not 0/1");
        trial.labels.push_back(static_cast<int>(y));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ValidationError(csv_path + ": no samples");

    const auto t_len = rows.size();
    trial.positions.resize(static_cast<std::size_t>(n) * t_len * 3);
    for (std::size_t t = 0; t < t_len; ++t)
        for (int m = 0; m < n; ++m)
            for (int c = 0; c < 3; ++c)
                trial.positions[(static_cast<std::size_t>(m) * t_len + t) * 3 +
                                static_cast<std::size_t>(c)] =
                    rows[t][static_cast<std::size_t>(3 * m + c)];

    const std::string side = sidecar_path(csv_path);
    std::ifstream sj(side);
    if (!sj) throw ValidationError("missing sidecar for " + csv_path + " (expected " + side + ")");
    nlohmann::json j;
    try {
        sj >> j;
        trial.trial_id = j.at("trial_id").get<std::string>();
        trial.subject_id = j.at("subject_id").get<std::string>();
        trial.sample_rate = j.at("sample_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(side + ": " + e.what());
    }

    trial.validate();
    return trial;
}

void save_trial(const Trial& trial, const std::string& csv_path) {
    trial.validate();
    std::ofstream out(csv_path);
    if (!out) throw ValidationError("cannot write trial file: " + csv_path);

    out << "sample";
    for (const auto& m : trial.markers) out << ',' << m << "_x," << m << "_y," << m << "_z";
    out << ",label\n";
    const int t_len = trial.num_samples();
    for (int t = 0; t < t_len; ++t) {
        out << t;
        for (int m = 0; m < trial.num_markers(); ++m)
            for (int c = 0; c < 3; ++c) out << ',' << format_real(trial.pos(m, t, c));
        out << ',' << trial.labels[static_cast<std::size_t>(t)] << '\n';
    }
    if (!out) throw ValidationError("write failed: " + csv_path);

    nlohmann::json j;
    j["trial_id"] = trial.trial_id;
    j["subject_id"] = trial.subject_id;
    j["sample_rate"] = trial.sample_rate;
    std::ofstream sj(sidecar_path(csv_path));
    if (!sj) throw ValidationError("cannot write sidecar: " + sidecar_path(csv_path));
    sj << j.dump(2) << '\n';
}

FeatureSeq displacement_features(const Trial& trial) {
    const int t_len = trial.num_samples();
    if (t_len < 2)
        throw ValidationError("displacement_features: trial " + trial.trial_id + " has " +
                              std::to_string(t_len) + " samples, need >= 2");
    const int n = trial.num_markers();
    FeatureSeq f;
    f.nodes = n;
    f.time = t_len - 1;
    f.data.resize(static_cast<std::size_t>(n) * f.time * 3);
    for (int m = 0; m < n; ++m)
        for (int t = 0; t + 1 < t_len; ++t)
            for (int c = 0; c < 3; ++c)
                f.data[(static_cast<std::size_t>(m) * f.time + t) * 3 +
                       static_cast<std::size_t>(c)] =
                    trial.pos(m, t + 1, c) - trial.pos(m, t, c);
    f.labels.assign(trial.labels.begin(), trial.labels.end() - 1);
    return f;
}

DiffArray to_model_input(const FeatureSeq& f) {
    DiffArray x = DiffArray::leaf(Shape{3, f.nodes, f.time}, false);
    for (int c = 0; c < 3; ++c)
        for (int n = 0; n < f.nodes; ++n)
            for (int t = 0; t < f.time; ++t)
                x.value[(static_cast<std::size_t>(c) * f.nodes + n) * f.time +
                        static_cast<std::size_t>(t)] =
                    f.data[(static_cast<std::size_t>(n) * f.time + t) * 3 +
                           static_cast<std::size_t>(c)];
    return x;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest: " + path);
    nlohmann::json j;
    Manifest m;
    try {
        in >> j;
        for (const auto& s : j.at("subjects")) {
            ManifestEntry e;
            e.subject_id = s.at("id").get<std::string>();
            e.enrichment = s.value("enrichment", false);
            for (const auto& t : s.at("trials")) e.trial_paths.push_back(t.get<std::string>());
            m.subjects.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    auto& subs = j["subjects"] = nlohmann::json::array();
    for (const auto& e : m.subjects) {
        nlohmann::json s;
        s["id"] = e.subject_id;
        s["enrichment"] = e.enrichment;
        s["trials"] = e.trial_paths;
        subs.push_back(std::move(s));
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::string& manifest_path) {
    const Manifest m = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    Dataset ds;
    for (const auto& e : m.subjects) {
        for (const auto& rel : e.trial_paths) {
            fs::path p(rel);
            if (p.is_relative()) p = base / p;
            Trial t = load_trial(p.string());
            if (t.subject_id != e.subject_id)
                throw ValidationError("manifest lists " + rel + " under subject '" +
                                      e.subject_id + "' but its sidecar says '" + t.subject_id +
                                      "'");
            ds.trials.push_back(std::move(t));
            ds.enrichment.push_back(e.enrichment);
        }
    }
    return ds;
}

void SynthConfig::validate() const {
    if (subjects < 1) throw ValidationError("synth: subjects must be >= 1");
    if (trials_per_subject < 1) throw ValidationError("synth: trials_per_subject must be >= 1");
    if (enrichment_subjects < 0) throw ValidationError("synth: enrichment_subjects must be >= 0");
    if (sample_rate <= 0) throw ValidationError("synth: sample_rate must be positive");
    if (trial_seconds_min <= 0 || trial_seconds_max < trial_seconds_min)
        throw ValidationError("synth: bad trial duration range");
    if (stride_hz_min <= 0 || stride_hz_max < stride_hz_min)
        throw ValidationError("synth: bad stride band");
    if (fog_rate < 0 || fog_rate > 1) throw ValidationError("synth: fog_rate must be in [0,1]");
    if (episodes_min < 0 || episodes_max < episodes_min)
        throw ValidationError("synth: bad episode count range");
    if (episode_seconds_min <= 0 || episode_seconds_max < episode_seconds_min)
        throw ValidationError("synth: bad episode duration range");
    if (trembling_fraction < 0 || trembling_fraction > 1)
        throw ValidationError("synth: trembling_fraction must be in [0,1]");
    if (tremble_hz_min <= 0 || tremble_hz_max < tremble_hz_min)
        throw ValidationError("synth: bad tremble band");
    if (tremble_amp_ratio < 0) throw ValidationError("synth: tremble_amp_ratio must be >= 0");
    if (noise_mm < 0) throw ValidationError("synth: noise_mm must be >= 0");
}

namespace {

struct MarkerSpec {
    real_t base[3];   // rest position, mm
    real_t swing;     // stride oscillation amplitude along the walk axis
    real_t bounce;    // vertical oscillation amplitude
    double phase;     // 0 = left leg phase, pi = right leg phase
};

// Matches the order of build_default_graph().
const MarkerSpec kMarkers[9] = {
    {{-110, 20, 950}, 15, 6, 0.0},            // LASI
    {{110, 20, 950}, 15, 6, 3.141592653589793},  // RASI
    {{0, -120, 960}, 8, 8, 1.5707963267948966},  // SACR
    {{-100, 0, 520}, 45, 10, 0.0},            // LKNE
    {{100, 0, 520}, 45, 10, 3.141592653589793},  // RKNE
    {{-105, -20, 90}, 95, 18, 0.0},           // LANK
    {{105, -20, 90}, 95, 18, 3.141592653589793}, // RANK
    {{-100, 120, 30}, 130, 12, 0.0},          // LTOE
    {{100, 120, 30}, 130, 12, 3.141592653589793},// RTOE
};

enum class Regime { gait, tremble, akinesia };

struct Episode {
    int start, end;  // samples, [start, end)
    Regime style;
};

Trial synth_trial(const SynthConfig& cfg, const std::string& subject, int trial_idx,
                  std::uint64_t trial_seed) {
    Rng rng(trial_seed);
    const double rate = cfg.sample_rate;
    const int t_len = std::max(
        4, static_cast<int>(std::lround(rate * rng.uniform(cfg.trial_seconds_min,
                                                           cfg.trial_seconds_max))));
    const double stride_hz = rng.uniform(cfg.stride_hz_min, cfg.stride_hz_max);
    const double tremble_hz = rng.uniform(cfg.tremble_hz_min, cfg.tremble_hz_max);

    // episode layout
    std::vector<Episode> episodes;
    if (cfg.episodes_max > 0 && rng.uniform01() < cfg.fog_rate) {
        const int count = rng.uniform_int(std::max(1, cfg.episodes_min), cfg.episodes_max);
        std::vector<int> durs(static_cast<std::size_t>(count));
        int total = 0;
        for (auto& d : durs) {
            d = std::max(2, static_cast<int>(std::lround(
                                rate * rng.uniform(cfg.episode_seconds_min,
                                                   cfg.episode_seconds_max))));
            total += d;
        }
        const int margin = static_cast<int>(std::lround(0.5 * rate));
        const int gap = static_cast<int>(std::lround(0.5 * rate));
        const int free_total = t_len - 2 * margin - total - (count - 1) * gap;
        if (free_total < 0)
            throw ValidationError("synth: episodes (" + std::to_string(total) +
                                  " samples) do not fit in trial of " + std::to_string(t_len) +
                                  " samples");
        std::vector<double> w(static_cast<std::size_t>(count) + 1);
        double wsum = 0;
        for (auto& v : w) {
            v = rng.uniform01() + 1e-9;
            wsum += v;
        }
        int cursor = margin;
        for (int e = 0; e < count; ++e) {
            cursor += static_cast<int>(std::floor(free_total * w[static_cast<std::size_t>(e)] /
                                                  wsum));
            const Regime style =
                rng.uniform01() < cfg.trembling_fraction ? Regime::tremble : Regime::akinesia;
            episodes.push_back({cursor, cursor + durs[static_cast<std::size_t>(e)], style});
            cursor += durs[static_cast<std::size_t>(e)] + gap;
        }
    }

    auto regime_at = [&](int t) {
        for (const auto& e : episodes)
            if (t >= e.start && t < e.end) return e.style;
        return Regime::gait;
    };

    Trial trial;
    trial.trial_id = subject + "_t" + std::to_string(trial_idx);
    trial.subject_id = subject;
    trial.sample_rate = rate;
    trial.markers = {"LASI", "RASI", "SACR", "LKNE", "RKNE", "LANK", "RANK", "LTOE", "RTOE"};
    trial.labels.assign(static_cast<std::size_t>(t_len), kClassFg);
    trial.positions.resize(static_cast<std::size_t>(9) * t_len * 3);
    for (const auto& e : episodes)
        for (int t = e.start; t < e.end && t < t_len; ++t)
            trial.labels[static_cast<std::size_t>(t)] = kClassFog;

    // regime targets blended with a short exponential ramp so transitions
    // are not single-sample cues
    const double blend = 1.0 / std::max(1.0, 0.25 * rate);
    double amp_mix = 1.0;    // stride amplitude multiplier
    double trem_mix = 0.0;   // tremble amplitude multiplier
    double vel = 12.0;       // forward mm per sample at 100 Hz, rescaled below
    const double v_gait = 1200.0 / rate;  // 1.2 m/s
    const double v_trem = 90.0 / rate;
    const double v_akin = 6.0 / rate;
    double phase = rng.uniform(0, 6.283185307179586);
    double trem_phase = rng.uniform(0, 6.283185307179586);
    double forward = 0.0;
    vel = v_gait;

    for (int t = 0; t < t_len; ++t) {
        double amp_target = 1.0, trem_target = 0.0, vel_target = v_gait;
        switch (regime_at(t)) {
            case Regime::gait: break;
            case Regime::tremble:
                amp_target = 0.0;
                trem_target = 1.0;
                vel_target = v_trem;
                break;
            case Regime::akinesia:
                amp_target = 0.0;
                trem_target = 0.0;
                vel_target = v_akin;
                break;
        }
        amp_mix += (amp_target - amp_mix) * blend;
        trem_mix += (trem_target - trem_mix) * blend;
        vel += (vel_target - vel) * blend;
        phase += 6.283185307179586 * stride_hz / rate;
        trem_phase += 6.283185307179586 * tremble_hz / rate;
        forward += vel;

        for (int m = 0; m < 9; ++m) {
            const MarkerSpec& ms = kMarkers[m];
            const double swing = ms.swing * (amp_mix * std::sin(phase + ms.phase) +
                                             trem_mix * cfg.tremble_amp_ratio *
                                                 std::sin(trem_phase + ms.phase));
            const double bounce = ms.bounce * (amp_mix * std::sin(2 * phase + ms.phase) +
                                               trem_mix * cfg.tremble_amp_ratio *
                                                   std::sin(2 * trem_phase + ms.phase));
            const double nx = rng.uniform(-cfg.noise_mm, cfg.noise_mm);
            const double ny = rng.uniform(-cfg.noise_mm, cfg.noise_mm);
            const double nz = rng.uniform(-cfg.noise_mm, cfg.noise_mm);
            trial.pos(m, t, 0) = static_cast<real_t>(ms.base[0] + nx);
            trial.pos(m, t, 1) = static_cast<real_t>(ms.base[1] + forward + swing + ny);
            trial.pos(m, t, 2) = static_cast<real_t>(ms.base[2] + bounce + nz);
        }
    }
    return trial;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    const int total_subjects = cfg.subjects + cfg.enrichment_subjects;
    for (int s = 0; s < total_subjects; ++s) {
        const std::string subject = cfg.subject_prefix + std::to_string(s);
        const bool enrich = s >= cfg.subjects;
        for (int t = 0; t < cfg.trials_per_subject; ++t) {
            ds.trials.push_back(synth_trial(
                cfg, subject, t,
                mix64(cfg.seed, static_cast<std::uint64_t>(s),
                      static_cast<std::uint64_t>(t))));
            ds.enrichment.push_back(enrich);
        }
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    Manifest m;
    for (std::size_t i = 0; i < ds.trials.size(); ++i) {
        const Trial& t = ds.trials[i];
        const std::string fname = t.trial_id + ".csv";
        save_trial(t, (fs::path(dir) / fname).string());
        auto it = std::find_if(m.subjects.begin(), m.subjects.end(), [&](const ManifestEntry& e) {
            return e.subject_id == t.subject_id;
        });
        if (it == m.subjects.end()) {
            m.subjects.push_back({t.subject_id, ds.enrichment[i], {}});
            it = m.subjects.end() - 1;
        }
        it->trial_paths.push_back(fname);
    }
    save_manifest(m, (fs::path(dir) / "manifest.json").string());
}

}  // namespace fogseg
