#include "oa/annotation_service.hpp"

#include <httplib.h>

#include "oa/errors.hpp"

namespace oa {

AnnotationService::AnnotationService(std::vector<AnnotationTask> tasks, JudgmentStore& store,
                                     ClassConfig classes, std::size_t quorum)
    : tasks_(std::move(tasks)), store_(store), classes_(std::move(classes)), quorum_(quorum) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    task_by_feature_.emplace(tasks_[i].feature, i);
    pages_ = std::max(pages_, tasks_[i].page + 1);
  }
}

nlohmann::json AnnotationService::task_json(const AnnotationTask& task) const {
  nlohmann::ordered_json j;
  j["feature"] = task.feature;
  j["definition"] = task.definition;
  j["learned_direction"] = classes_.name(task.learned_direction);
  j["page"] = task.page;
  return nlohmann::json::parse(j.dump());
}

nlohmann::json AnnotationService::next_page(const std::string& assessor_id) const {
  auto out = nlohmann::json::array();
  std::size_t begin = 0;
  while (begin < tasks_.size()) {
    std::size_t end = begin;
    while (end < tasks_.size() && tasks_[end].page == tasks_[begin].page) ++end;
    bool finished_by_assessor = true;
    bool needs_votes = false;
    for (std::size_t i = begin; i < end; ++i) {
      if (!store_.has_judged(assessor_id, tasks_[i].feature)) finished_by_assessor = false;
      if (!tasks_[i].is_gold && store_.assessor_count(tasks_[i].feature) < quorum_) {
        needs_votes = true;
      }
    }
    if (!finished_by_assessor && needs_votes) {
      for (std::size_t i = begin; i < end; ++i) out.push_back(task_json(tasks_[i]));
      return out;
    }
    begin = end;
  }
  return out;
}

AnnotationService::Reply AnnotationService::submit(const std::string& request_body) {
  const auto reject = [](int status, const std::string& message) {
    return Reply{status, {{"accepted", false}, {"error", message}}};
  };
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::parse_error&) {
    return reject(400, "body is not JSON");
  }
  if (!body.is_object() || !body.contains("assessor") || !body["assessor"].is_string() ||
      !body.contains("feature") || !body["feature"].is_string() || !body.contains("likert") ||
      !body["likert"].is_number_integer()) {
    return reject(400, "expected {\"assessor\": string, \"feature\": string, \"likert\": 1-5}");
  }
  const auto it = task_by_feature_.find(body["feature"].get<std::string>());
  if (it == task_by_feature_.end()) return reject(404, "unknown feature");

  Judgment j;
  j.assessor_id = body["assessor"].get<std::string>();
  j.feature = it->first;
  j.likert = body["likert"].get<int>();
  j.learned_direction = tasks_[it->second].learned_direction;
  try {
    const AssessorRecord rec = store_.record(std::move(j));
    return Reply{200, {{"accepted", true}, {"trusted", rec.trusted}}};
  } catch (const ValidationError& e) {
    return reject(400, e.what());
  }
}

nlohmann::json AnnotationService::progress() const {
  std::size_t real = 0;
  std::size_t complete = 0;
  for (const auto& t : tasks_) {
    if (t.is_gold) continue;
    ++real;
    if (store_.assessor_count(t.feature) >= quorum_) ++complete;
  }
  std::size_t untrusted = 0;
  const auto records = store_.assessors();
  for (const auto& r : records) untrusted += !r.trusted;
  nlohmann::ordered_json j;
  j["features"] = real;
  j["pages"] = pages_;
  j["complete_features"] = complete;
  j["judgments"] = store_.log().size();
  j["assessors"] = records.size();
  j["untrusted_assessors"] = untrusted;
  return nlohmann::json::parse(j.dump());
}

void AnnotationService::mount(httplib::Server& server,
                              const std::optional<std::filesystem::path>& ui_dir) {
  server.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("assessor") || req.get_param_value("assessor").empty()) {
      res.status = 400;
      res.set_content(R"({"error":"missing assessor parameter"})", "application/json");
      return;
    }
    res.set_content(next_page(req.get_param_value("assessor")).dump(), "application/json");
  });
  server.Post("/api/judgments", [this](const httplib::Request& req, httplib::Response& res) {
    const Reply reply = submit(req.body);
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  });
  server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(progress().dump(), "application/json");
  });
  if (ui_dir) {
    if (!server.set_mount_point("/", ui_dir->string())) {
      throw ConfigError("UI directory does not exist: " + ui_dir->string());
    }
  }
}

}  // namespace oa
