#pragma once
// Background jobs with polled progress. At most one mutating job runs per
// owner (project or dataset); reads are never blocked.

#include "svseg/workbench/project.hpp"

#include <condition_variable>
#include <thread>

namespace svseg {

enum class JobKind { preprocess, train, predict, segment, cluster, evaluate, reuse };
enum class JobState { queued, running, done, failed };

std::string to_string(JobKind k);
std::string to_string(JobState s);
JobKind parse_job_kind(std::string_view s);

struct JobStatus {
    std::string id;
    JobKind kind = JobKind::preprocess;
    std::string owner;  // project or dataset id
    JobState state = JobState::queued;
    double progress = 0.0;
    std::string message;
    nlohmann::json result;  // set on success

    bool terminal() const { return state == JobState::done || state == JobState::failed; }
    nlohmann::json to_json() const;
};

class JobManager {
public:
    using Body = std::function<nlohmann::json(const ProgressFn&)>;

    JobManager() = default;
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// Starts `body` on a worker thread. Throws ConflictError when a job for
    /// `owner` is still queued or running.
    std::string submit(JobKind kind, const std::string& owner, Body body);

    /// Throws NotFoundError for unknown ids.
    JobStatus status(const std::string& id) const;
    std::vector<JobStatus> list() const;
    /// Blocks until the job is terminal and returns its final status.
    JobStatus wait(const std::string& id) const;
    bool busy(const std::string& owner) const;

private:
    void update(const std::string& id, const std::function<void(JobStatus&)>& f);

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::string, JobStatus> jobs_;
    std::map<std::string, std::string> active_;  // owner -> job id
    std::vector<std::thread> workers_;
    std::uint64_t next_id_ = 1;
};

}  // namespace svseg
