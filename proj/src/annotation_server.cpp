#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "lincal/annotation_service.hpp"

namespace lincal {
namespace {

constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>lincal annotation</title></head>"
    "<body><p>Annotation API is running. No UI bundle was configured.</p></body></html>";

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const AnnotationError& e) {
  int status = 422;
  switch (e.kind()) {
    case AnnotationError::Kind::kNotFound: status = 404; break;
    case AnnotationError::Kind::kForbidden: status = 403; break;
    case AnnotationError::Kind::kInvalid: status = 422; break;
  }
  Json body = Json::object();
  body["error"] = e.what();
  if (!e.fields().empty()) {
    Json errors = Json::array();
    for (const auto& f : e.fields()) {
      errors.push_back({{"index", f.index}, {"record_id", f.record_id}, {"field", f.field}, {"message", f.message}});
    }
    body["errors"] = std::move(errors);
  }
  send_json(res, status, body);
}

void bad_request(httplib::Response& res, const std::string& message) {
  send_json(res, 400, Json{{"error", message}});
}

Json batch_json(const BatchView& v) {
  Json j = Json::object();
  j["batch_id"] = v.batch_id.empty() ? Json(nullptr) : Json(v.batch_id);
  j["onboarding"] = v.onboarding;
  Json items = Json::array();
  for (const auto& item : v.items) {
    items.push_back({{"record_id", item.record_id},
                     {"question", item.question},
                     {"response", item.response},
                     {"gold_aliases", item.gold_aliases}});
  }
  j["items"] = std::move(items);
  return j;
}

// Parses the labels array; shape errors are reported per index like
// taxonomy errors so the client can highlight the offending card.
std::vector<SubmittedLabel> parse_labels(const Json& arr) {
  if (!arr.is_array()) throw AnnotationError(AnnotationError::Kind::kInvalid, "labels must be an array");
  std::vector<SubmittedLabel> out;
  std::vector<AnnotationError::FieldError> errors;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const Json& lj = arr[i];
    SubmittedLabel l;
    if (!lj.is_object() || !lj.contains("record_id") || !lj["record_id"].is_string()) {
      errors.push_back({i, "", "record_id", "missing record_id"});
      continue;
    }
    l.record_id = lj["record_id"].get<std::string>();
    try {
      l.confidence = parse_confidence(lj.value("confidence", std::string{}));
    } catch (const DataError& e) {
      errors.push_back({i, l.record_id, "confidence", e.what()});
    }
    if (lj.contains("correctness4") && !lj["correctness4"].is_null()) {
      try {
        l.correctness4 = parse_correctness4(lj["correctness4"].is_string() ? lj["correctness4"].get<std::string>() : "");
      } catch (const DataError& e) {
        errors.push_back({i, l.record_id, "correctness4", e.what()});
      }
    }
    out.push_back(std::move(l));
  }
  if (!errors.empty()) throw AnnotationError(AnnotationError::Kind::kInvalid, "submission rejected", std::move(errors));
  return out;
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, std::string ui_dir)
    : store_(store), ui_dir_(std::move(ui_dir)), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;

  s.Post("/api/annotators", [this](const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return bad_request(res, "body must be a JSON object");
    const std::string name = body.value("name", std::string{});
    if (name.empty()) return bad_request(res, "name is required");
    send_json(res, 200, Json{{"annotator_id", store_.register_annotator(name)}});
  });

  s.Get("/api/batch", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.get_param_value("annotator");
    if (id.empty()) return bad_request(res, "annotator query parameter is required");
    try {
      send_json(res, 200, batch_json(store_.next_batch(id)));
    } catch (const AnnotationError& e) {
      send_error(res, e);
    }
  });

  s.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return bad_request(res, "body must be a JSON object");
    if (!body.contains("annotator_id") || !body["annotator_id"].is_string() || !body.contains("batch_id") ||
        !body["batch_id"].is_string()) {
      return bad_request(res, "annotator_id and batch_id are required");
    }
    try {
      const auto labels = parse_labels(body.value("labels", Json()));
      const SubmitSummary summary = store_.submit_labels(body["annotator_id"].get<std::string>(),
                                                         body["batch_id"].get<std::string>(), labels);
      Json out = Json::object();
      out["stored"] = summary.stored;
      out["overwritten"] = summary.overwritten;
      if (summary.onboarding_passed) out["onboarding_passed"] = *summary.onboarding_passed;
      send_json(res, 200, out);
    } catch (const AnnotationError& e) {
      send_error(res, e);
    }
  });

  s.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, store_.progress());
  });

  s.Get("/", [this](const httplib::Request&, httplib::Response& res) {
    if (!ui_dir_.empty()) {
      std::ifstream in(std::filesystem::path(ui_dir_) / "index.html", std::ios::binary);
      if (in) {
        std::ostringstream ss;
        ss << in.rdbuf();
        res.set_content(ss.str(), "text/html");
        return;
      }
    }
    res.set_content(kPlaceholderPage, "text/html");
  });
  if (!ui_dir_.empty() && std::filesystem::is_directory(ui_dir_)) s.set_mount_point("/", ui_dir_);

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_json(res, 500, Json{{"error", e.what()}});
    } catch (...) {
      send_json(res, 500, Json{{"error", "internal error"}});
    }
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw DataError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw DataError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

bool AnnotationServer::listen() { return server_->listen_after_bind(); }

void AnnotationServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace lincal
