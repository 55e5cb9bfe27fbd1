#include "svseg/workbench/jobs.hpp"

namespace svseg {

std::string to_string(JobKind k) {
    switch (k) {
        case JobKind::preprocess: return "preprocess";
        case JobKind::train: return "train";
        case JobKind::predict: return "predict";
        case JobKind::segment: return "segment";
        case JobKind::cluster: return "cluster";
        case JobKind::evaluate: return "evaluate";
        case JobKind::reuse: return "reuse";
    }
    return "?";
}

std::string to_string(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "?";
}

JobKind parse_job_kind(std::string_view s) {
    for (auto k : {JobKind::preprocess, JobKind::train, JobKind::predict, JobKind::segment, JobKind::cluster,
                   JobKind::evaluate, JobKind::reuse})
        if (s == to_string(k)) return k;
    throw PreconditionError("unknown job kind '" + std::string(s) + "'");
}

nlohmann::json JobStatus::to_json() const {
    nlohmann::json j{{"id", id},       {"kind", to_string(kind)}, {"owner", owner},
                     {"state", to_string(state)}, {"progress", progress}, {"message", message}};
    if (!result.is_null()) j["result"] = result;
    return j;
}

JobManager::~JobManager() {
    for (auto& t : workers_)
        if (t.joinable()) t.join();
}

void JobManager::update(const std::string& id, const std::function<void(JobStatus&)>& f) {
    {
        std::lock_guard lock(mu_);
        auto& job = jobs_.at(id);
        if (job.terminal()) return;  // terminal states never change
        f(job);
        if (job.terminal()) active_.erase(job.owner);
    }
    cv_.notify_all();
}

std::string JobManager::submit(JobKind kind, const std::string& owner, Body body) {
    std::string id;
    {
        std::lock_guard lock(mu_);
        if (auto it = active_.find(owner); it != active_.end()) {
            throw ConflictError("job " + it->second + " is already running on '" + owner + "'");
        }
        id = "job-" + std::to_string(next_id_++);
        JobStatus st;
        st.id = id;
        st.kind = kind;
        st.owner = owner;
        jobs_[id] = st;
        active_[owner] = id;
        workers_.emplace_back([this, id, body = std::move(body)] {
            update(id, [](JobStatus& j) { j.state = JobState::running; });
            try {
                auto result = body([this, id](double p) {
                    update(id, [p](JobStatus& j) { j.progress = std::clamp(p, j.progress, 1.0); });
                });
                update(id, [&](JobStatus& j) {
                    j.state = JobState::done;
                    j.progress = 1.0;
                    j.result = std::move(result);
                });
            } catch (const std::exception& e) {
                const std::string msg = e.what();
                update(id, [&](JobStatus& j) {
                    j.state = JobState::failed;
                    j.message = msg;
                });
            }
        });
    }
    return id;
}

JobStatus JobManager::status(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
    return it->second;
}

std::vector<JobStatus> JobManager::list() const {
    std::lock_guard lock(mu_);
    std::vector<JobStatus> out;
    for (const auto& [id, j] : jobs_) out.push_back(j);
    return out;
}

JobStatus JobManager::wait(const std::string& id) const {
    std::unique_lock lock(mu_);
    if (!jobs_.count(id)) throw NotFoundError("unknown job '" + id + "'");
    cv_.wait(lock, [&] { return jobs_.at(id).terminal(); });
    return jobs_.at(id);
}

bool JobManager::busy(const std::string& owner) const {
    std::lock_guard lock(mu_);
    return active_.count(owner) > 0;
}

}  // namespace svseg
