#include "metaadd/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace metaadd::protonet {

using nlohmann::json;

std::string_view to_string(Architecture a) noexcept { return a == Architecture::fcn ? "fcn" : "rnn"; }

Architecture parse_architecture(std::string_view name) {
    if (name == "fcn") return Architecture::fcn;
    if (name == "rnn") return Architecture::rnn;
    throw std::invalid_argument("unknown architecture '" + std::string(name) + "' (expected fcn or rnn)");
}

// ---------------------------------------------------------------- network

EmbeddingNet EmbeddingNet::fcn(std::vector<std::size_t> dims) {
    if (dims.size() < 2) throw std::invalid_argument("an FCN needs at least input and output widths");
    for (auto d : dims) {
        if (d == 0) throw std::invalid_argument("layer widths must be positive");
    }
    EmbeddingNet net;
    net.arch_ = Architecture::fcn;
    net.dims_ = std::move(dims);
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < net.dims_.size(); ++i) count += net.dims_[i + 1] * (net.dims_[i] + 1);
    net.params_.assign(count, 0.0);
    return net;
}

EmbeddingNet EmbeddingNet::rnn(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim) {
    if (input_dim == 0 || hidden == 0 || embed_dim == 0) throw std::invalid_argument("RNN sizes must be positive");
    EmbeddingNet net;
    net.arch_ = Architecture::rnn;
    net.dims_ = {input_dim, hidden, embed_dim};
    // Wx (H), Wh (H x H), bh (H), Wo (M x H), bo (M)
    net.params_.assign(hidden + hidden * hidden + hidden + embed_dim * hidden + embed_dim, 0.0);
    return net;
}

void EmbeddingNet::init(Rng& rng) {
    auto fill = [&](double* w, std::size_t count, std::size_t fan_in) {
        const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i) w[i] = rng.uniform(-r, r);
    };
    std::fill(params_.begin(), params_.end(), 0.0);
    double* p = params_.data();
    if (arch_ == Architecture::fcn) {
        for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
            fill(p, dims_[i + 1] * dims_[i], dims_[i]);
            p += dims_[i + 1] * (dims_[i] + 1);
        }
    } else {
        const std::size_t H = dims_[1], M = dims_[2];
        fill(p, H, 1);
        // Orthogonal recurrent matrix: Gram-Schmidt over Gaussian rows.
        double* Wh = p + H;
        for (std::size_t i = 0; i < H * H; ++i) Wh[i] = rng.normal();
        for (std::size_t r = 0; r < H; ++r) {
            double* row = Wh + r * H;
            for (std::size_t q = 0; q < r; ++q) {
                const double* prev = Wh + q * H;
                double dot = 0.0;
                for (std::size_t c = 0; c < H; ++c) dot += row[c] * prev[c];
                for (std::size_t c = 0; c < H; ++c) row[c] -= dot * prev[c];
            }
            double norm = 0.0;
            for (std::size_t c = 0; c < H; ++c) norm += row[c] * row[c];
            norm = std::sqrt(norm);
            for (std::size_t c = 0; c < H; ++c) row[c] /= norm;
        }
        fill(p + H + H * H + H, M * H, H);
    }
}

void EmbeddingNet::check_input(std::span<const double> x) const {
    if (dims_.empty()) throw std::logic_error("embedding net has no layers");
    if (x.size() != dims_.front()) {
        throw std::invalid_argument("input has " + std::to_string(x.size()) + " values, net expects " +
                                    std::to_string(dims_.front()));
    }
}

std::vector<double> EmbeddingNet::embed(std::span<const double> x) const {
    check_input(x);
    return arch_ == Architecture::fcn ? forward_fcn(x, nullptr) : forward_rnn(x, nullptr);
}

std::vector<double> EmbeddingNet::forward(std::span<const double> x, Tape& tape) const {
    check_input(x);
    tape.values.clear();
    return arch_ == Architecture::fcn ? forward_fcn(x, &tape) : forward_rnn(x, &tape);
}

void EmbeddingNet::backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    if (grad_out.size() != embed_dim()) throw std::invalid_argument("output gradient size mismatch");
    if (arch_ == Architecture::fcn) {
        backward_fcn(tape, grad_out, grad);
    } else {
        backward_rnn(tape, grad_out, grad);
    }
}

std::vector<double> EmbeddingNet::forward_fcn(std::span<const double> x, Tape* tape) const {
    std::vector<double> a(x.begin(), x.end());
    if (tape) tape->values.push_back(a);
    const double* p = params_.data();
    const std::size_t layers = dims_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = dims_[l], out = dims_[l + 1];
        const double* W = p;
        const double* b = p + out * in;
        std::vector<double> z(out);
        for (std::size_t r = 0; r < out; ++r) {
            double s = b[r];
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) s += row[c] * a[c];
            z[r] = (l + 1 < layers) ? std::max(0.0, s) : s;
        }
        a = std::move(z);
        if (tape) tape->values.push_back(a);
        p += out * (in + 1);
    }
    return a;
}

void EmbeddingNet::backward_fcn(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const {
    const std::size_t layers = dims_.size() - 1;
    std::vector<std::size_t> offset(layers);
    for (std::size_t l = 0, o = 0; l < layers; ++l) {
        offset[l] = o;
        o += dims_[l + 1] * (dims_[l] + 1);
    }
    std::vector<double> g(grad_out.begin(), grad_out.end());
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = dims_[l], out = dims_[l + 1];
        const auto& a_out = tape.values[l + 1];
        const auto& a_in = tape.values[l];
        if (l + 1 < layers) {
            for (std::size_t r = 0; r < out; ++r) {
                if (a_out[r] <= 0.0) g[r] = 0.0;
            }
        }
        const double* W = params_.data() + offset[l];
        double* dW = grad.data() + offset[l];
        double* db = dW + out * in;
        std::vector<double> g_in(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double gr = g[r];
            if (gr == 0.0) continue;
            db[r] += gr;
            double* drow = dW + r * in;
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) {
                drow[c] += gr * a_in[c];
                g_in[c] += gr * row[c];
            }
        }
        g = std::move(g_in);
    }
}

std::vector<double> EmbeddingNet::forward_rnn(std::span<const double> x, Tape* tape) const {
    const std::size_t H = dims_[1], M = dims_[2];
    const double* Wx = params_.data();
    const double* Wh = Wx + H;
    const double* bh = Wh + H * H;
    const double* Wo = bh + H;
    const double* bo = Wo + M * H;

    if (tape) tape->values.emplace_back(x.begin(), x.end());
    std::vector<double> h(H, 0.0), next(H);
    if (tape) tape->values.push_back(h);
    for (double xt : x) {
        for (std::size_t r = 0; r < H; ++r) {
            double s = bh[r] + Wx[r] * xt;
            const double* row = Wh + r * H;
            for (std::size_t c = 0; c < H; ++c) s += row[c] * h[c];
            next[r] = std::tanh(s);
        }
        h.swap(next);
        if (tape) tape->values.push_back(h);
    }
    std::vector<double> y(M);
    for (std::size_t r = 0; r < M; ++r) {
        double s = bo[r];
        const double* row = Wo + r * H;
        for (std::size_t c = 0; c < H; ++c) s += row[c] * h[c];
        y[r] = s;
    }
    return y;
}

void EmbeddingNet::backward_rnn(const Tape& tape, std::span<const double> grad_out, std::span<double> grad) const {
    const std::size_t H = dims_[1], M = dims_[2];
    const double* Wh = params_.data() + H;
    const double* Wo = Wh + H * H + H;
    double* dWx = grad.data();
    double* dWh = dWx + H;
    double* dbh = dWh + H * H;
    double* dWo = dbh + H;
    double* dbo = dWo + M * H;

    const auto& x = tape.values[0];
    const std::size_t steps = x.size();
    const auto& h_last = tape.values[steps + 1];
    std::vector<double> dh(H, 0.0);
    for (std::size_t r = 0; r < M; ++r) {
        const double g = grad_out[r];
        dbo[r] += g;
        for (std::size_t c = 0; c < H; ++c) {
            dWo[r * H + c] += g * h_last[c];
            dh[c] += g * Wo[r * H + c];
        }
    }
    std::vector<double> da(H), dh_prev(H);
    for (std::size_t t = steps; t-- > 0;) {
        const auto& h = tape.values[t + 2];
        const auto& h_prev = tape.values[t + 1];
        for (std::size_t r = 0; r < H; ++r) da[r] = dh[r] * (1.0 - h[r] * h[r]);
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (std::size_t r = 0; r < H; ++r) {
            const double g = da[r];
            dWx[r] += g * x[t];
            dbh[r] += g;
            for (std::size_t c = 0; c < H; ++c) {
                dWh[r * H + c] += g * h_prev[c];
                dh_prev[c] += g * Wh[r * H + c];
            }
        }
        dh.swap(dh_prev);
    }
}

json EmbeddingNet::to_json() const {
    return {{"architecture", to_string(arch_)}, {"dims", dims_}, {"params", params_}};
}

EmbeddingNet EmbeddingNet::from_json(const json& j) {
    const auto arch = parse_architecture(j.at("architecture").get<std::string>());
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    EmbeddingNet net;
    if (arch == Architecture::fcn) {
        net = fcn(dims);
    } else {
        if (dims.size() != 3) throw std::invalid_argument("RNN checkpoint needs dims {input, hidden, embed}");
        net = rnn(dims[0], dims[1], dims[2]);
    }
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params_.size()) {
        throw std::invalid_argument("checkpoint has " + std::to_string(params.size()) + " parameters, layout needs " +
                                    std::to_string(net.params_.size()));
    }
    net.params_ = params;
    return net;
}

// ---------------------------------------------------------------- prototypes

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

}  // namespace

double cosine_distance(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw std::invalid_argument("cosine distance of vectors with different sizes");
    const double nu = std::sqrt(dot(u, u));
    const double nv = std::sqrt(dot(v, v));
    if (nu == 0.0 || nv == 0.0) return 1.0;
    return 1.0 - dot(u, v) / (nu * nv);
}

Probabilities softmax_neg_distance(std::span<const double> embedding,
                                   const std::array<std::vector<double>, kNumDriftKinds>& centers) {
    Probabilities logits{};
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) logits[k] = -cosine_distance(embedding, centers[k]);
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& z : logits) {
        z = std::exp(z - top);
        sum += z;
    }
    for (auto& z : logits) z /= sum;
    return logits;
}

PrototypeSet compute_prototypes(const EmbeddingNet& net, std::span<const metafeat::MetaSample> support) {
    PrototypeSet set;
    for (auto& c : set.centers) c.assign(net.embed_dim(), 0.0);
    for (const auto& s : support) {
        if (!s.label) continue;
        const std::size_t k = index_of(*s.label);
        const auto z = net.embed(s.gaps);
        for (std::size_t i = 0; i < z.size(); ++i) set.centers[k][i] += z[i];
        ++set.counts[k];
    }
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        if (set.counts[k] == 0) {
            throw std::invalid_argument("no support sample for class " + std::string(to_string(drift_kind_from_index(k))));
        }
        for (auto& v : set.centers[k]) v /= static_cast<double>(set.counts[k]);
    }
    return set;
}

Probabilities classify(const EmbeddingNet& net, const PrototypeSet& prototypes, std::span<const double> x) {
    return softmax_neg_distance(net.embed(x), prototypes.centers);
}

DriftKind argmax(const Probabilities& p) noexcept {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
        if (p[k] > p[best]) best = k;
    }
    return static_cast<DriftKind>(best);
}

// ---------------------------------------------------------------- episode loss

namespace {

// Adds scale * d cos(u, v) / du into out.
void add_cosine_grad(std::span<const double> u, std::span<const double> v, double nu, double nv, double cos,
                     double scale, std::span<double> out) {
    const double a = scale / (nu * nv);
    const double b = scale * cos / (nu * nu);
    for (std::size_t i = 0; i < u.size(); ++i) out[i] += a * v[i] - b * u[i];
}

}  // namespace

LossAndGrad episode_loss_and_grad(const EmbeddingNet& net, const Episode& episode) {
    const std::size_t M = net.embed_dim();
    LossAndGrad out;
    out.grad.assign(net.parameter_count(), 0.0);

    std::array<std::vector<EmbeddingNet::Tape>, kNumDriftKinds> support_tapes;
    std::array<std::vector<double>, kNumDriftKinds> centers;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const auto& sup = episode.support[k];
        if (sup.empty()) throw std::invalid_argument("episode has no support for a class");
        centers[k].assign(M, 0.0);
        support_tapes[k].resize(sup.size());
        for (std::size_t j = 0; j < sup.size(); ++j) {
            const auto z = net.forward(sup[j], support_tapes[k][j]);
            for (std::size_t i = 0; i < M; ++i) centers[k][i] += z[i];
        }
        for (auto& v : centers[k]) v /= static_cast<double>(sup.size());
    }

    std::size_t total_queries = 0;
    for (const auto& q : episode.query) total_queries += q.size();
    if (total_queries == 0) throw std::invalid_argument("episode has no query points");
    const double scale = 1.0 / static_cast<double>(total_queries);

    std::array<double, kNumDriftKinds> center_norm{};
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) center_norm[k] = std::sqrt(dot(centers[k], centers[k]));

    std::array<std::vector<double>, kNumDriftKinds> d_centers;
    for (auto& d : d_centers) d.assign(M, 0.0);
    EmbeddingNet::Tape tape;
    std::vector<double> d_query(M);

    for (std::size_t y = 0; y < kNumDriftKinds; ++y) {
        for (const auto& x : episode.query[y]) {
            const auto q = net.forward(x, tape);
            const double nq = std::sqrt(dot(q, q));
            Probabilities cos{};
            Probabilities logits{};
            for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
                const bool degenerate = nq == 0.0 || center_norm[k] == 0.0;
                cos[k] = degenerate ? 0.0 : dot(q, centers[k]) / (nq * center_norm[k]);
                logits[k] = cos[k] - 1.0;
            }
            const double top = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (double z : logits) sum += std::exp(z - top);
            const double log_norm = top + std::log(sum);
            out.loss -= scale * (logits[y] - log_norm);

            std::fill(d_query.begin(), d_query.end(), 0.0);
            bool any = false;
            for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
                if (nq == 0.0 || center_norm[k] == 0.0) continue;
                const double p = std::exp(logits[k] - log_norm);
                const double dz = scale * (p - (k == y ? 1.0 : 0.0));
                add_cosine_grad(q, centers[k], nq, center_norm[k], cos[k], dz, d_query);
                add_cosine_grad(centers[k], q, center_norm[k], nq, cos[k], dz, d_centers[k]);
                any = true;
            }
            if (any) net.backward(tape, d_query, out.grad);
        }
    }

    std::vector<double> d_support(M);
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const double share = 1.0 / static_cast<double>(support_tapes[k].size());
        for (std::size_t i = 0; i < M; ++i) d_support[i] = d_centers[k][i] * share;
        for (const auto& t : support_tapes[k]) net.backward(t, d_support, out.grad);
    }
    return out;
}

LossAndGrad sample_loss_and_grad(const EmbeddingNet& net, const PrototypeSet& prototypes, std::span<const double> x,
                                 DriftKind label) {
    const std::size_t y = index_of(label);
    if (y >= kNumDriftKinds) throw std::invalid_argument("invalid class index");
    LossAndGrad out;
    out.grad.assign(net.parameter_count(), 0.0);
    EmbeddingNet::Tape tape;
    const auto q = net.forward(x, tape);
    const double nq = std::sqrt(dot(q, q));

    Probabilities cos{}, logits{};
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const double nc = std::sqrt(dot(prototypes.centers[k], prototypes.centers[k]));
        cos[k] = (nq == 0.0 || nc == 0.0) ? 0.0 : dot(q, prototypes.centers[k]) / (nq * nc);
        logits[k] = cos[k] - 1.0;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - top);
    const double log_norm = top + std::log(sum);
    out.loss = log_norm - logits[y];

    std::vector<double> d_query(q.size(), 0.0);
    bool any = false;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const double nc = std::sqrt(dot(prototypes.centers[k], prototypes.centers[k]));
        if (nq == 0.0 || nc == 0.0) continue;
        const double dz = std::exp(logits[k] - log_norm) - (k == y ? 1.0 : 0.0);
        add_cosine_grad(q, prototypes.centers[k], nq, nc, cos[k], dz, d_query);
        any = true;
    }
    if (any) net.backward(tape, d_query, out.grad);
    return out;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::size_t size, Config cfg) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw std::invalid_argument("Adam state, parameters and gradient must have the same size");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
}

// ---------------------------------------------------------------- detector

json TrainConfig::to_json() const {
    return {{"arch", to_string(arch)},
            {"fcn_hidden", fcn_hidden},
            {"rnn_hidden", rnn_hidden},
            {"embed_dim", embed_dim},
            {"support", episode.support},
            {"query", episode.query},
            {"episodes", episodes},
            {"patience", patience},
            {"validate_every", validate_every},
            {"restarts", restarts},
            {"validation_fraction", validation_fraction},
            {"final_support", final_support},
            {"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"eps", adam.eps},
            {"weight_decay", adam.weight_decay},
            {"seed", seed}};
}

Probabilities MetaDetector::classify(std::span<const double> gaps) const {
    return protonet::classify(net, prototypes, gaps);
}

json MetaDetector::to_json() const {
    json protos = json::object();
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        protos[std::string(to_string(drift_kind_from_index(k)))] = {{"center", prototypes.centers[k]},
                                                                    {"count", prototypes.counts[k]}};
    }
    return {{"format", "metaadd-detector"},
            {"version", 1},
            {"net", net.to_json()},
            {"prototypes", protos},
            {"window", {{"n", spec.n}, {"L", spec.L}, {"sign_agnostic", spec.sign_agnostic}}},
            {"metadata", metadata}};
}

MetaDetector MetaDetector::from_json(const json& j) {
    if (j.value("format", "") != "metaadd-detector") throw std::invalid_argument("not a meta-detector checkpoint");
    MetaDetector d;
    d.net = EmbeddingNet::from_json(j.at("net"));
    const auto& w = j.at("window");
    d.spec.n = w.at("n").get<std::size_t>();
    d.spec.L = w.at("L").get<std::size_t>();
    d.spec.sign_agnostic = w.value("sign_agnostic", false);
    d.spec.validate();
    if (d.spec.L != d.net.input_dim()) throw std::invalid_argument("checkpoint window L does not match net input");
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const auto& p = j.at("prototypes").at(std::string(to_string(drift_kind_from_index(k))));
        d.prototypes.centers[k] = p.at("center").get<std::vector<double>>();
        d.prototypes.counts[k] = p.at("count").get<std::size_t>();
        if (d.prototypes.centers[k].size() != d.net.embed_dim()) {
            throw std::invalid_argument("prototype size does not match embedding size");
        }
    }
    d.metadata = j.value("metadata", json::object());
    return d;
}

void MetaDetector::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_json().dump() << '\n';
    if (!out) throw std::runtime_error("failed writing " + path);
}

MetaDetector MetaDetector::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return from_json(json::parse(in));
}

// ---------------------------------------------------------------- training

namespace {

using Pools = std::array<std::vector<const metafeat::MetaSample*>, kNumDriftKinds>;

double validation_loss(const EmbeddingNet& net, const Pools& support_pool, const std::vector<std::size_t>& support_pick,
                       const Pools& validation) {
    std::vector<metafeat::MetaSample> support;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        for (std::size_t j = 0; j < support_pick[k]; ++j) support.push_back(*support_pool[k][j]);
    }
    const auto protos = compute_prototypes(net, support);
    double loss = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        for (const auto* s : validation[k]) {
            const auto p = classify(net, protos, s->gaps);
            loss -= std::log(std::max(p[k], std::numeric_limits<double>::min()));
            ++count;
        }
    }
    return loss / static_cast<double>(count);
}

}  // namespace

MetaDetector train_meta_detector(std::span<const metafeat::MetaSample> corpus, const metafeat::WindowSpec& spec,
                                 const TrainConfig& cfg, TrainingLog* log) {
    spec.validate();
    if (cfg.episode.support == 0 || cfg.episode.query == 0) {
        throw std::invalid_argument("episodes need at least one support and one query sample per class");
    }
    Rng rng(cfg.seed);

    Pools all;
    for (const auto& s : corpus) {
        if (!s.label) continue;
        if (s.gaps.size() != spec.L) {
            throw std::invalid_argument("corpus sample has " + std::to_string(s.gaps.size()) + " gaps, expected " +
                                        std::to_string(spec.L));
        }
        all[index_of(*s.label)].push_back(&s);
    }

    const std::size_t need = cfg.episode.support + cfg.episode.query;
    Pools train, validation;
    bool validate = cfg.validation_fraction > 0.0 && cfg.episodes > 0;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        auto pool = all[k];
        if (pool.size() < need) {
            throw std::invalid_argument("class " + std::string(to_string(drift_kind_from_index(k))) + " has " +
                                        std::to_string(pool.size()) + " samples, episodes need " +
                                        std::to_string(need));
        }
        rng.shuffle(pool);
        const auto held =
            static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(pool.size())));
        if (held == 0 || pool.size() - held < need) validate = false;
        validation[k].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(held));
        train[k].assign(pool.begin() + static_cast<std::ptrdiff_t>(held), pool.end());
    }
    if (!validate) {
        for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
            train[k] = all[k];
            validation[k].clear();
        }
    }

    MetaDetector det;
    det.spec = spec;
    if (cfg.arch == Architecture::fcn) {
        std::vector<std::size_t> dims{spec.L};
        dims.insert(dims.end(), cfg.fcn_hidden.begin(), cfg.fcn_hidden.end());
        dims.push_back(cfg.embed_dim);
        det.net = EmbeddingNet::fcn(std::move(dims));
    } else {
        det.net = EmbeddingNet::rnn(spec.L, cfg.rnn_hidden, cfg.embed_dim);
    }

    // Validation prototypes come from a fixed draw of training supports.
    std::vector<std::size_t> val_pick(kNumDriftKinds);
    Pools val_support;
    if (validate) {
        for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
            const std::size_t take = std::min(cfg.final_support, train[k].size());
            for (auto i : rng.sample_indices(train[k].size(), take)) val_support[k].push_back(train[k][i]);
            val_pick[k] = take;
        }
    }

    struct Run {
        TrainingLog log;
        std::vector<double> params;
        double best_val = std::numeric_limits<double>::infinity();
        std::size_t done = 0;
    };
    auto run_once = [&](std::uint64_t seed) {
        Run r;
        Rng run_rng(seed);
        EmbeddingNet net = det.net;
        Rng init_rng(run_rng.fork());
        net.init(init_rng);
        Adam adam(net.parameter_count(), cfg.adam);
        r.params.assign(net.params().begin(), net.params().end());
        std::size_t stale = 0;
        Episode ep;
        for (std::size_t e = 0; e < cfg.episodes; ++e) {
            for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
                ep.support[k].clear();
                ep.query[k].clear();
                const auto pick = run_rng.sample_indices(train[k].size(), need);
                for (std::size_t j = 0; j < need; ++j) {
                    const auto& g = train[k][pick[j]]->gaps;
                    (j < cfg.episode.support ? ep.support[k] : ep.query[k]).emplace_back(g);
                }
            }
            auto lg = episode_loss_and_grad(net, ep);
            if (!std::isfinite(lg.loss)) {
                throw std::runtime_error("non-finite episode loss at episode " + std::to_string(e));
            }
            adam.step(net.params(), lg.grad);
            r.log.episode_loss.push_back(lg.loss);
            r.done = e + 1;

            if (validate && (r.done % cfg.validate_every == 0 || r.done == cfg.episodes)) {
                const double v = validation_loss(net, val_support, val_pick, validation);
                r.log.validation_loss.emplace_back(r.done, v);
                if (v < r.best_val) {
                    r.best_val = v;
                    r.log.best_episode = r.done;
                    r.params.assign(net.params().begin(), net.params().end());
                    stale = 0;
                } else if (++stale >= cfg.patience) {
                    r.log.stopped_early = true;
                    break;
                }
            }
        }
        if (!validate || !std::isfinite(r.best_val)) {
            r.params.assign(net.params().begin(), net.params().end());
            r.log.best_episode = r.done;
        }
        return r;
    };

    const std::size_t restarts = validate ? std::max<std::size_t>(1, cfg.restarts) : 1;
    std::vector<std::uint64_t> seeds(restarts);
    for (auto& s : seeds) s = rng.fork();
    Run best;
    std::vector<double> restart_losses;
    for (std::size_t i = 0; i < restarts; ++i) {
        Run r = run_once(seeds[i]);
        restart_losses.push_back(r.best_val);
        if (i == 0 || r.best_val < best.best_val) {
            r.log.kept_restart = i;
            best = std::move(r);
        }
    }
    best.log.restart_validation_loss = restart_losses;
    std::copy(best.params.begin(), best.params.end(), det.net.params().begin());
    const std::size_t done = best.done;
    const double best_val = best.best_val;
    TrainingLog& out = best.log;

    std::vector<metafeat::MetaSample> final_support;
    for (std::size_t k = 0; k < kNumDriftKinds; ++k) {
        const std::size_t take = std::min(cfg.final_support, train[k].size());
        for (auto i : rng.sample_indices(train[k].size(), take)) final_support.push_back(*train[k][i]);
    }
    det.prototypes = compute_prototypes(det.net, final_support);

    det.metadata = {{"train", cfg.to_json()},
                    {"episodes_run", done},
                    {"best_episode", out.best_episode},
                    {"stopped_early", out.stopped_early},
                    {"kept_restart", out.kept_restart},
                    {"corpus_size", corpus.size()}};
    if (!out.episode_loss.empty()) det.metadata["final_episode_loss"] = out.episode_loss.back();
    if (std::isfinite(best_val)) det.metadata["best_validation_loss"] = best_val;
    if (log) *log = std::move(out);
    return det;
}

}  // namespace metaadd::protonet
