#include "metaadd/metafeat.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace metaadd::metafeat {

void WindowSpec::validate() const {
    if (n < 1) throw std::invalid_argument("window length n must be at least 1");
    if (L < 1) throw std::invalid_argument("gap count L must be at least 1");
}

std::vector<double> window_means(std::span<const int> trace, std::size_t n) {
    if (n < 1) throw std::invalid_argument("window length n must be at least 1");
    if (trace.size() < 2 * n) {
        throw std::invalid_argument("trace of length " + std::to_string(trace.size()) +
                                    " holds fewer than two windows of " + std::to_string(n));
    }
    const std::size_t windows = trace.size() / n;
    std::vector<double> means;
    means.reserve(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        long long sum = 0;
        for (std::size_t t = w * n; t < (w + 1) * n; ++t) sum += trace[t];
        means.push_back(static_cast<double>(sum) / static_cast<double>(n));
    }
    return means;
}

std::vector<double> gaps(std::span<const double> means) {
    if (means.size() < 2) throw std::invalid_argument("gaps need at least two window means");
    std::vector<double> out(means.size() - 1);
    for (std::size_t i = 0; i + 1 < means.size(); ++i) out[i] = means[i + 1] - means[i];
    return out;
}

namespace {

void fold_sign(std::vector<double>& g, bool sign_agnostic) {
    if (!sign_agnostic) return;
    for (double& v : g) v = std::fabs(v);
}

}  // namespace

MetaSample make_meta_sample(std::span<const int> trace, const WindowSpec& spec, std::optional<DriftKind> label) {
    spec.validate();
    const std::size_t extent = spec.extent();
    if (trace.size() < extent) {
        throw std::invalid_argument("trace of length " + std::to_string(trace.size()) + " is shorter than (L+1)*n = " +
                                    std::to_string(extent));
    }
    const std::size_t offset = trace.size() - extent;
    MetaSample s;
    s.gaps = gaps(window_means(trace.subspan(offset), spec.n));
    fold_sign(s.gaps, spec.sign_agnostic);
    s.label = label;
    s.window_size = spec.n;
    s.offset = offset;
    return s;
}

StreamingView::StreamingView(WindowSpec spec) : spec_(spec) { spec_.validate(); }

std::optional<MetaSample> StreamingView::push(int error) {
    ++position_;
    window_sum_ += error;
    if (++window_fill_ < spec_.n) return std::nullopt;

    means_.push_back(static_cast<double>(window_sum_) / static_cast<double>(spec_.n));
    window_sum_ = 0;
    window_fill_ = 0;
    if (means_.size() > spec_.L + 1) means_.pop_front();
    if (means_.size() < spec_.L + 1) return std::nullopt;

    MetaSample s;
    s.gaps.resize(spec_.L);
    for (std::size_t i = 0; i < spec_.L; ++i) s.gaps[i] = means_[i + 1] - means_[i];
    fold_sign(s.gaps, spec_.sign_agnostic);
    s.window_size = spec_.n;
    s.offset = position_ - spec_.extent();
    return s;
}

// ---------------------------------------------------------------- corpus CSV

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

double parse_double(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

}  // namespace

void write_corpus(std::ostream& out, std::span<const MetaSample> corpus, const std::string& meta_json) {
    if (!meta_json.empty()) out << "# meta: " << meta_json << '\n';
    const std::size_t L = corpus.empty() ? 0 : corpus.front().gaps.size();
    for (std::size_t i = 0; i < L; ++i) out << "gap_" << i << ',';
    out << "label\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& s : corpus) {
        if (s.gaps.size() != L) throw std::invalid_argument("corpus mixes different gap counts");
        for (double g : s.gaps) out << g << ',';
        if (s.label) out << to_string(*s.label);
        out << '\n';
    }
}

std::vector<MetaSample> read_corpus(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t columns = 0;
    std::vector<MetaSample> corpus;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim_cr(line);
        if (view.empty() || view.front() == '#') continue;
        const auto fields = split(view, ',');
        if (columns == 0) {
            if (fields.back() != "label") throw std::runtime_error("corpus header must end with a label column");
            columns = fields.size();
            continue;
        }
        if (fields.size() != columns) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                                     " fields, got " + std::to_string(fields.size()));
        }
        MetaSample s;
        s.gaps.reserve(columns - 1);
        for (std::size_t i = 0; i + 1 < columns; ++i) s.gaps.push_back(parse_double(fields[i], line_no));
        if (!fields.back().empty()) s.label = parse_drift_kind(fields.back());
        s.offset = corpus.size();
        corpus.push_back(std::move(s));
    }
    if (columns == 0) throw std::runtime_error("corpus has no header");
    return corpus;
}

void write_corpus_file(const std::string& path, std::span<const MetaSample> corpus, const std::string& meta_json) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_corpus(out, corpus, meta_json);
    if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<MetaSample> read_corpus_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto corpus = read_corpus(in);
    for (auto& s : corpus) s.source = path;
    return corpus;
}

}  // namespace metaadd::metafeat
