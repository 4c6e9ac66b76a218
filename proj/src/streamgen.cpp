#include "metaadd/streamgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "metaadd/random.hpp"

namespace metaadd::streamgen {

void DriftSpec::validate(std::size_t length) const {
    if (position > length || width > length - position) {
        throw std::invalid_argument("drift position " + std::to_string(position) + " + width " +
                                    std::to_string(width) + " exceeds stream length " +
                                    std::to_string(length));
    }
    const bool zero_width_kind = kind == DriftKind::sudden || kind == DriftKind::normal;
    if (zero_width_kind != (width == 0)) {
        throw std::invalid_argument(std::string(to_string(kind)) +
                                    " drift requires width " + (zero_width_kind ? "== 0" : "> 0"));
    }
    if (!(magnitude >= 0.0 && magnitude <= 1.0)) {
        throw std::invalid_argument("drift magnitude must lie in [0, 1]");
    }
    if (kind == DriftKind::normal && magnitude != 0.0) {
        throw std::invalid_argument("normal drift must have magnitude 0");
    }
}

std::string_view to_string(Generator g) noexcept {
    switch (g) {
        case Generator::sea: return "sea";
        case Generator::hyperplane: return "hyp";
        case Generator::agrawal: return "agr";
        case Generator::rbf: return "rbf";
        case Generator::rtg: return "rtg";
        case Generator::error_trace: return "error-trace";
    }
    return "sea";
}

Generator parse_generator(std::string_view name) {
    if (name == "sea") return Generator::sea;
    if (name == "hyp" || name == "hyperplane") return Generator::hyperplane;
    if (name == "agr" || name == "agrawal") return Generator::agrawal;
    if (name == "rbf") return Generator::rbf;
    if (name == "rtg") return Generator::rtg;
    if (name == "error-trace" || name == "trace") return Generator::error_trace;
    throw std::invalid_argument("unknown generator '" + std::string(name) + "'");
}

void StreamConfig::validate() const {
    if (length < 1) throw std::invalid_argument("stream length must be >= 1");
    if (!(noise >= 0.0 && noise <= 1.0)) throw std::invalid_argument("noise must lie in [0, 1]");
    std::size_t previous_end = 0;
    for (const auto& d : drifts) {
        d.validate(length);
        if (d.position < previous_end) {
            throw std::invalid_argument("drifts must be sorted and non-overlapping");
        }
        previous_end = d.position + d.width;
    }
}

namespace {

constexpr std::size_t kHyperplaneDims = 10;
constexpr std::size_t kRbfDims = 10;
constexpr std::size_t kRbfCentroids = 50;
constexpr std::size_t kRtgDims = 10;
constexpr int kRtgDepth = 5;
constexpr int kRtgMinLeafDepth = 3;
constexpr double kRtgLeafFraction = 0.15;
constexpr std::array<double, 4> kSeaThresholds = {8.0, 9.0, 7.0, 9.5};

using Params = std::vector<double>;

Params lerp(const Params& a, const Params& b, double t) {
    Params out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + t * (b[i] - a[i]);
    return out;
}

/// A generator's family of concepts. Concept parameters are flat vectors so
/// continuous families can interpolate between them.
class ConceptFamily {
  public:
    virtual ~ConceptFamily() = default;
    virtual bool continuous() const = 0;
    /// Parameters of the index-th concept of the chain.
    virtual Params concept_at(std::size_t index, Rng& rng) = 0;
    virtual Sample draw(const Params& params, Rng& rng) const = 0;
};

class SeaFamily final : public ConceptFamily {
  public:
    bool continuous() const override { return true; }
    Params concept_at(std::size_t index, Rng&) override {
        return {kSeaThresholds[index % kSeaThresholds.size()]};
    }
    Sample draw(const Params& c, Rng& rng) const override {
        Sample s;
        s.features = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
        s.label = s.features[0] + s.features[1] <= c[0] ? 0 : 1;
        return s;
    }
};

class HyperplaneFamily final : public ConceptFamily {
  public:
    bool continuous() const override { return true; }
    Params concept_at(std::size_t, Rng& rng) override {
        Params w(kHyperplaneDims);
        for (auto& v : w) v = rng.uniform();
        return w;
    }
    Sample draw(const Params& w, Rng& rng) const override {
        Sample s;
        s.features.resize(kHyperplaneDims);
        double dot = 0.0;
        double total = 0.0;
        for (std::size_t i = 0; i < kHyperplaneDims; ++i) {
            s.features[i] = rng.uniform();
            dot += w[i] * s.features[i];
            total += w[i];
        }
        s.label = dot >= 0.5 * total ? 1 : 0;
        return s;
    }
};

/// AGRAWAL loan-applicant records under classification functions 1-3 of the
/// original generator.
class AgrawalFamily final : public ConceptFamily {
  public:
    bool continuous() const override { return false; }
    Params concept_at(std::size_t index, Rng&) override {
        return {static_cast<double>(index % 3)};
    }
    Sample draw(const Params& c, Rng& rng) const override {
        const double salary = rng.uniform(20000.0, 150000.0);
        const double commission = salary >= 75000.0 ? 0.0 : rng.uniform(10000.0, 75000.0);
        const double age = static_cast<double>(rng.between(20, 80));
        const double elevel = static_cast<double>(rng.between(0, 4));
        const double car = static_cast<double>(rng.between(1, 20));
        const double zipcode = static_cast<double>(rng.between(0, 8));
        const double hvalue = (9.0 - zipcode) * 100000.0 * rng.uniform(0.5, 1.5);
        const double hyears = static_cast<double>(rng.between(1, 30));
        const double loan = rng.uniform(0.0, 500000.0);

        bool group_a = false;
        switch (static_cast<int>(c[0])) {
            case 0:
                group_a = age < 40.0 || age >= 60.0;
                break;
            case 1:
                group_a = (age < 40.0 && salary >= 50000.0 && salary <= 100000.0) ||
                          (age >= 40.0 && age < 60.0 && salary >= 75000.0 && salary <= 125000.0) ||
                          (age >= 60.0 && salary >= 25000.0 && salary <= 75000.0);
                break;
            default:
                group_a = (age < 40.0 && elevel <= 1.0) ||
                          (age >= 40.0 && age < 60.0 && elevel >= 1.0 && elevel <= 3.0) ||
                          (age >= 60.0 && elevel >= 2.0);
                break;
        }
        Sample s;
        s.features = {salary, commission, age, elevel, car, zipcode, hvalue, hyears, loan};
        s.label = group_a ? 0 : 1;
        return s;
    }
};

/// Random RBF: weighted Gaussian blobs with fixed labels, weights and spreads.
/// Concepts differ only in centroid positions.
class RbfFamily final : public ConceptFamily {
  public:
    explicit RbfFamily(Rng& rng) {
        for (std::size_t i = 0; i < kRbfCentroids; ++i) {
            labels_.push_back(static_cast<int>(rng.below(2)));
            stddevs_.push_back(rng.uniform());
            const double w = rng.uniform();
            cumulative_weight_.push_back((cumulative_weight_.empty() ? 0.0 : cumulative_weight_.back()) + w);
        }
    }
    bool continuous() const override { return true; }
    Params concept_at(std::size_t, Rng& rng) override {
        Params centres(kRbfCentroids * kRbfDims);
        for (auto& v : centres) v = rng.uniform();
        return centres;
    }
    Sample draw(const Params& centres, Rng& rng) const override {
        const double pick = rng.uniform() * cumulative_weight_.back();
        const auto it = std::upper_bound(cumulative_weight_.begin(), cumulative_weight_.end(), pick);
        const std::size_t k = std::min<std::size_t>(it - cumulative_weight_.begin(), kRbfCentroids - 1);

        std::array<double, kRbfDims> direction{};
        double norm = 0.0;
        for (auto& d : direction) {
            d = rng.uniform(-1.0, 1.0);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        const double scale = rng.normal() * stddevs_[k] / (norm > 0.0 ? norm : 1.0);

        Sample s;
        s.features.resize(kRbfDims);
        for (std::size_t j = 0; j < kRbfDims; ++j) {
            s.features[j] = centres[k * kRbfDims + j] + direction[j] * scale;
        }
        s.label = labels_[k];
        return s;
    }

  private:
    std::vector<int> labels_;
    std::vector<double> stddevs_;
    std::vector<double> cumulative_weight_;
};

/// Random tree generator: a fresh random binary tree per concept.
class RtgFamily final : public ConceptFamily {
  public:
    bool continuous() const override { return false; }
    Params concept_at(std::size_t, Rng& rng) override {
        Tree tree;
        grow(tree, 0, rng);
        trees_.push_back(std::move(tree));
        return {static_cast<double>(trees_.size() - 1)};
    }
    Sample draw(const Params& c, Rng& rng) const override {
        Sample s;
        s.features.resize(kRtgDims);
        for (auto& v : s.features) v = rng.uniform();
        const Tree& tree = trees_[static_cast<std::size_t>(c[0])];
        std::size_t node = 0;
        while (tree[node].feature >= 0) {
            const auto& n = tree[node];
            node = s.features[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        s.label = tree[node].label;
        return s;
    }

  private:
    struct Node {
        int feature = -1;  ///< -1 marks a leaf
        double threshold = 0.0;
        std::size_t left = 0;
        std::size_t right = 0;
        int label = 0;
    };
    using Tree = std::vector<Node>;

    static std::size_t grow(Tree& tree, int depth, Rng& rng) {
        const std::size_t id = tree.size();
        tree.emplace_back();
        const bool leaf = depth >= kRtgDepth || (depth >= kRtgMinLeafDepth && rng.uniform() < kRtgLeafFraction);
        if (leaf) {
            tree[id].label = static_cast<int>(rng.below(2));
            return id;
        }
        tree[id].feature = static_cast<int>(rng.below(kRtgDims));
        tree[id].threshold = rng.uniform();
        const std::size_t left = grow(tree, depth + 1, rng);
        const std::size_t right = grow(tree, depth + 1, rng);
        tree[id].left = left;
        tree[id].right = right;
        return id;
    }

    std::vector<Tree> trees_;
};

std::unique_ptr<ConceptFamily> make_family(Generator g, Rng& concept_rng) {
    switch (g) {
        case Generator::sea: return std::make_unique<SeaFamily>();
        case Generator::hyperplane: return std::make_unique<HyperplaneFamily>();
        case Generator::agrawal: return std::make_unique<AgrawalFamily>();
        case Generator::rbf: return std::make_unique<RbfFamily>(concept_rng);
        case Generator::rtg: return std::make_unique<RtgFamily>();
        case Generator::error_trace: break;
    }
    throw std::invalid_argument("generate_stream does not produce error traces; use simulate_error_trace");
}

std::size_t gradual_pairs(std::size_t width) {
    if (width < 6) return std::max<std::size_t>(1, width / 2);
    return std::clamp<std::size_t>(width / 64, 3, 6);
}

}  // namespace

std::size_t feature_count(Generator g) {
    switch (g) {
        case Generator::sea: return 3;
        case Generator::hyperplane: return kHyperplaneDims;
        case Generator::agrawal: return 9;
        case Generator::rbf: return kRbfDims;
        case Generator::rtg: return kRtgDims;
        case Generator::error_trace: return 0;
    }
    return 0;
}

std::vector<Sample> generate_stream(const StreamConfig& cfg) {
    cfg.validate();
    Rng concept_rng(mix_seed(cfg.seed, 1));
    Rng data_rng(mix_seed(cfg.seed, 2));
    auto family = make_family(cfg.generator, concept_rng);

    // Concept chain: concepts[j] is active after the j-th effective drift.
    std::vector<Params> concepts{family->concept_at(0, concept_rng)};
    std::size_t chain_index = 0;
    for (const auto& d : cfg.drifts) {
        if (d.kind == DriftKind::normal || d.magnitude == 0.0) {
            concepts.push_back(concepts.back());
            continue;
        }
        ++chain_index;
        Params target = family->concept_at(chain_index, concept_rng);
        if (family->continuous()) target = lerp(concepts.back(), target, d.magnitude);
        concepts.push_back(std::move(target));
    }

    std::vector<Sample> out;
    out.reserve(cfg.length);
    std::size_t next = 0;  // index of the first drift not yet completed
    for (std::size_t t = 0; t < cfg.length; ++t) {
        while (next < cfg.drifts.size() && t >= cfg.drifts[next].position + cfg.drifts[next].width) {
            ++next;
        }
        const Params* active = &concepts[next];
        Params blended;
        if (next < cfg.drifts.size()) {
            const auto& d = cfg.drifts[next];
            if (t >= d.position && d.width > 0) {
                const double progress = static_cast<double>(t - d.position) / static_cast<double>(d.width);
                const bool mix = d.kind == DriftKind::gradual || !family->continuous();
                if (mix) {
                    if (data_rng.uniform() < progress) active = &concepts[next + 1];
                } else {
                    blended = lerp(concepts[next], concepts[next + 1], progress);
                    active = &blended;
                }
            }
        }
        Sample s = family->draw(*active, data_rng);
        if (cfg.noise > 0.0 && data_rng.uniform() < cfg.noise) s.label = 1 - s.label;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> error_probability_profile(const TraceParams& p) {
    if (!(p.base_error >= 0.0 && p.base_error <= 1.0 && p.drift_error >= 0.0 && p.drift_error <= 1.0)) {
        throw std::invalid_argument("error probabilities must lie in [0, 1]");
    }
    if (p.kind == DriftKind::sudden && p.width > 0) {
        throw std::invalid_argument("sudden drift cannot have a transition width");
    }
    if ((p.kind == DriftKind::gradual || p.kind == DriftKind::incremental) && p.width == 0) {
        throw std::invalid_argument(std::string(to_string(p.kind)) + " drift requires width > 0");
    }
    if (p.position > p.length || p.width > p.length - p.position) {
        throw std::invalid_argument("trace position + width exceeds length");
    }

    const double before = p.error_increases ? p.base_error : p.drift_error;
    const double after = p.error_increases ? p.drift_error : p.base_error;
    std::vector<double> prob(p.length, before);
    if (p.kind == DriftKind::normal) return prob;

    const std::size_t end = p.position + p.width;
    for (std::size_t t = end; t < p.length; ++t) prob[t] = after;

    if (p.kind == DriftKind::incremental) {
        for (std::size_t t = p.position; t < end; ++t) {
            const double progress = static_cast<double>(t - p.position + 1) / static_cast<double>(p.width + 1);
            prob[t] = before + progress * (after - before);
        }
    } else if (p.kind == DriftKind::gradual) {
        // Pairs of (old, new) segments; the new share grows pair by pair.
        const std::size_t pairs = gradual_pairs(p.width);
        for (std::size_t t = p.position; t < end; ++t) {
            const std::size_t scaled = (t - p.position) * pairs;
            const std::size_t pair = scaled / p.width;
            const double within = static_cast<double>(scaled % p.width) / static_cast<double>(p.width);
            const double new_share = static_cast<double>(pair + 1) / static_cast<double>(pairs + 1);
            prob[t] = within < 1.0 - new_share ? before : after;
        }
    }
    return prob;
}

ErrorTrace simulate_error_trace(const TraceParams& params) {
    const auto prob = error_probability_profile(params);
    Rng rng(mix_seed(params.seed, 3));
    ErrorTrace trace(prob.size());
    for (std::size_t t = 0; t < prob.size(); ++t) trace[t] = rng.uniform() < prob[t] ? 1 : 0;
    return trace;
}

// ---------------------------------------------------------------- file IO

nlohmann::json drifts_to_json(std::span<const DriftSpec> drifts) {
    auto out = nlohmann::json::array();
    for (const auto& d : drifts) {
        out.push_back({{"kind", std::string(to_string(d.kind))},
                       {"position", d.position},
                       {"width", d.width},
                       {"magnitude", d.magnitude}});
    }
    return out;
}

std::vector<DriftSpec> drifts_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw std::invalid_argument("drifts must be a JSON array");
    std::vector<DriftSpec> out;
    for (const auto& e : j) {
        try {
            DriftSpec d;
            d.kind = parse_drift_kind(e.at("kind").get<std::string>());
            d.position = e.at("position").get<std::size_t>();
            d.width = e.value("width", std::size_t{0});
            d.magnitude = e.value("magnitude", 0.0);
            out.push_back(d);
        } catch (const nlohmann::json::exception& ex) {
            throw std::invalid_argument(std::string("bad drift entry: ") + ex.what());
        }
    }
    return out;
}

namespace {

constexpr std::string_view kMetaPrefix = "# meta:";

std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

[[noreturn]] void fail_at(std::size_t line_no, const std::string& what) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " + what);
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) fail_at(line_no, "bad number '" + std::string(s) + "'");
    return v;
}

nlohmann::json parse_meta(std::string_view line, std::size_t line_no) {
    auto meta = nlohmann::json::parse(line.substr(kMetaPrefix.size()), nullptr, false);
    if (meta.is_discarded()) fail_at(line_no, "meta line is not valid JSON");
    return meta;
}

void write_meta(std::ostream& out, const nlohmann::json& meta) {
    if (!meta.is_null()) out << kMetaPrefix << ' ' << meta.dump() << '\n';
}

}  // namespace

void write_stream_csv(std::ostream& out, std::span<const Sample> samples, const nlohmann::json& meta) {
    write_meta(out, meta);
    const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
    for (std::size_t i = 0; i < d; ++i) out << 'f' << i << ',';
    out << "label\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& s : samples) {
        if (s.features.size() != d) throw std::invalid_argument("stream mixes feature counts");
        for (double v : s.features) out << v << ',';
        out << s.label << '\n';
    }
}

StreamFile read_stream_csv(std::istream& in) {
    StreamFile file;
    std::string line;
    std::size_t line_no = 0;
    std::size_t columns = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = strip_cr(line);
        if (view.empty()) continue;
        if (view.starts_with(kMetaPrefix)) {
            file.meta = parse_meta(view, line_no);
            continue;
        }
        if (view.front() == '#') continue;
        std::vector<std::string_view> fields;
        for (std::size_t start = 0;;) {
            const auto pos = view.find(',', start);
            fields.push_back(view.substr(start, pos == std::string_view::npos ? pos : pos - start));
            if (pos == std::string_view::npos) break;
            start = pos + 1;
        }
        if (columns == 0) {
            if (fields.back() != "label") fail_at(line_no, "stream header must end with a label column");
            columns = fields.size();
            continue;
        }
        if (fields.size() != columns) {
            fail_at(line_no, "expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()));
        }
        Sample s;
        s.features.reserve(columns - 1);
        for (std::size_t i = 0; i + 1 < columns; ++i) s.features.push_back(parse_number<double>(fields[i], line_no));
        s.label = parse_number<int>(fields.back(), line_no);
        file.samples.push_back(std::move(s));
    }
    if (columns == 0) throw std::runtime_error("stream has no header");
    return file;
}

void write_stream_file(const std::string& path, std::span<const Sample> samples, const nlohmann::json& meta) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_stream_csv(out, samples, meta);
    if (!out) throw std::runtime_error("failed writing " + path);
}

StreamFile read_stream_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_stream_csv(in);
}

void write_error_trace(std::ostream& out, std::span<const int> errors, const nlohmann::json& meta) {
    write_meta(out, meta);
    for (int e : errors) {
        if (e != 0 && e != 1) throw std::invalid_argument("error trace values must be 0 or 1");
        out << e << '\n';
    }
}

TraceFile read_error_trace(std::istream& in) {
    TraceFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = strip_cr(line);
        if (view.empty()) continue;
        if (view.starts_with(kMetaPrefix)) {
            file.meta = parse_meta(view, line_no);
            continue;
        }
        if (view.front() == '#') continue;
        if (view != "0" && view != "1") fail_at(line_no, "expected 0 or 1, got '" + std::string(view) + "'");
        file.errors.push_back(view == "1" ? 1 : 0);
    }
    return file;
}

void write_error_trace_file(const std::string& path, std::span<const int> errors, const nlohmann::json& meta) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_error_trace(out, errors, meta);
    if (!out) throw std::runtime_error("failed writing " + path);
}

TraceFile read_error_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_error_trace(in);
}

}  // namespace metaadd::streamgen
