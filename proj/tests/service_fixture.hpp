#pragma once
// In-process HTTP service on a free port plus small client helpers.

#include "helpers.hpp"

#include "svseg/workbench/service.hpp"

#include "httplib.h"
#include "json.hpp"

#include <thread>

namespace svseg::test {

class ServiceFixture {
public:
    explicit ServiceFixture(WorkbenchConfig config = {}) : service_({root_.path(), config}) {
        port_ = service_.bind("127.0.0.1", 0);
        thread_ = std::thread([this] { service_.run(); });
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(120, 0);
        for (int i = 0; i < 200; ++i) {
            if (auto r = client_->Get("/api/health"); r && r->status == 200) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }
    ~ServiceFixture() {
        service_.stop();
        thread_.join();
    }

    httplib::Client& client() { return *client_; }
    const std::filesystem::path& root() const { return root_.path(); }
    WorkbenchService& service() { return service_; }

    httplib::Result post(const std::string& path, const nlohmann::json& body = nlohmann::json::object()) {
        return client_->Post(path, body.dump(), "application/json");
    }
    httplib::Result put(const std::string& path, const nlohmann::json& body) {
        return client_->Put(path, body.dump(), "application/json");
    }

    /// Polls a job until it is terminal and returns its final status document.
    nlohmann::json wait_job(const std::string& id) {
        for (;;) {
            auto r = client_->Get("/api/jobs/" + id);
            if (!r || r->status != 200) throw std::runtime_error("job poll failed");
            auto j = nlohmann::json::parse(r->body);
            if (j["state"] == "done" || j["state"] == "failed") return j;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    }

    /// POSTs a job request, expects 202 and waits for completion.
    nlohmann::json run_job(const std::string& path, const nlohmann::json& body = nlohmann::json::object()) {
        auto r = post(path, body);
        if (!r || r->status != 202) {
            throw std::runtime_error("job request " + path + " failed: " + (r ? r->body : std::string("no response")));
        }
        return wait_job(nlohmann::json::parse(r->body)["id"].get<std::string>());
    }

private:
    TempDir root_;
    WorkbenchService service_;
    int port_ = 0;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
};

}  // namespace svseg::test
