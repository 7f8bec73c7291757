#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oa/annotation.hpp"

namespace httplib {
class Server;
}

namespace oa {

// Task queue and judgment intake behind the annotation UI.
//
//   GET  /api/tasks?assessor=<id>  next page the assessor has not finished
//   POST /api/judgments            {"assessor", "feature", "likert"}
//   GET  /api/progress             counts
//
// Gold tasks are serialised exactly like real ones.
class AnnotationService {
 public:
  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  AnnotationService(std::vector<AnnotationTask> tasks, JudgmentStore& store, ClassConfig classes,
                    std::size_t quorum = 5);

  nlohmann::json next_page(const std::string& assessor_id) const;
  Reply submit(const std::string& request_body);
  nlohmann::json progress() const;

  // Registers the API routes; optionally serves a static UI directory at "/".
  void mount(httplib::Server& server,
             const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

  const std::vector<AnnotationTask>& tasks() const noexcept { return tasks_; }

 private:
  nlohmann::json task_json(const AnnotationTask& task) const;

  std::vector<AnnotationTask> tasks_;
  JudgmentStore& store_;
  ClassConfig classes_;
  std::size_t quorum_;
  std::map<std::string, std::size_t> task_by_feature_;
  std::size_t pages_ = 0;
};

}  // namespace oa
