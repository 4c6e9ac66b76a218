#include "metaadd/label_service.hpp"

#include <charconv>
#include <stdexcept>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace metaadd::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, {{"error", message}}, status);
}

std::optional<std::uint64_t> parse_id(const std::string& text) {
    std::uint64_t id = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
    if (ec != std::errc{} || end != text.data() + text.size()) return std::nullopt;
    return id;
}

}  // namespace

LabelService::LabelService(std::shared_ptr<active::QueryQueue> queue, Config cfg)
    : queue_(std::move(queue)), cfg_(std::move(cfg)), server_(std::make_unique<httplib::Server>()) {
    if (!queue_) throw std::invalid_argument("label service needs a query queue");
    install_routes();
}

LabelService::~LabelService() { stop(); }

void LabelService::install_routes() {
    auto& srv = *server_;
    srv.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});

    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Get("/api/queries", [this](const httplib::Request& req, httplib::Response& res) {
        std::optional<active::QueryStatus> filter;
        if (req.has_param("status")) {
            const auto value = req.get_param_value("status");
            filter = active::parse_query_status(value);
            if (!filter) return send_error(res, 400, "unknown status '" + value + "'");
        }
        json out = json::array();
        for (const auto& q : queue_->list(filter)) out.push_back(active::to_json(q));
        send_json(res, out);
    });

    srv.Get(R"(/api/queries/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = parse_id(req.matches[1]);
        const auto q = id ? queue_->get(*id) : std::nullopt;
        if (!q) return send_error(res, 404, "unknown query id");
        send_json(res, active::to_json(*q));
    });

    srv.Post(R"(/api/queries/(\d+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = parse_id(req.matches[1]);
        if (!id || !queue_->get(*id)) return send_error(res, 404, "unknown query id");
        const json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return send_error(res, 400, "body must be a JSON object");
        const auto it = body.find("class");
        if (it == body.end() || !it->is_string()) return send_error(res, 422, "missing class");
        const auto kind = try_parse_drift_kind(it->get<std::string>());
        if (!kind) return send_error(res, 422, "invalid class '" + it->get<std::string>() + "'");
        switch (queue_->answer(*id, *kind)) {
            case active::QueryQueue::AnswerResult::ok: res.status = 204; return;
            case active::QueryQueue::AnswerResult::unknown_id: return send_error(res, 404, "unknown query id");
            case active::QueryQueue::AnswerResult::not_pending:
                return send_error(res, 409, "query is " + std::string(active::to_string(queue_->get(*id)->status)));
        }
    });

    srv.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
        send_json(res, active::to_json(queue_->status()));
    });
}

int LabelService::start() {
    if (running()) return port_;
    if (cfg_.port == 0) {
        port_ = server_->bind_to_any_port(cfg_.host);
        if (port_ < 0) throw std::runtime_error("cannot bind " + cfg_.host);
    } else {
        if (!server_->bind_to_port(cfg_.host, cfg_.port)) {
            throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
        }
        port_ = cfg_.port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void LabelService::stop() {
    if (!thread_.joinable()) return;
    server_->stop();
    thread_.join();
}

}  // namespace metaadd::service
