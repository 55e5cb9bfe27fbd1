#pragma once
// HTTP backend for the annotation UI. JSON bodies, PNG/TIFF for images,
// raw bytes for model export/import.
//
// Error statuses: 400 malformed request, 404 unknown id, 409 a job is
// already running on the project or dataset, 422 precondition violated.

#include "svseg/workbench/config.hpp"
#include "svseg/workbench/dataset.hpp"
#include "svseg/workbench/jobs.hpp"

#include <memory>

namespace svseg {

struct ServiceOptions {
    std::filesystem::path root;
    WorkbenchConfig config;
};

class WorkbenchService {
public:
    explicit WorkbenchService(ServiceOptions options);
    ~WorkbenchService();
    WorkbenchService(const WorkbenchService&) = delete;
    WorkbenchService& operator=(const WorkbenchService&) = delete;

    /// Binds the listening socket; port 0 picks a free port. Returns the port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void run();
    void stop();

    ProjectStore& projects();
    DatasetStore& datasets();
    JobManager& jobs();
    const WorkbenchConfig& config() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace svseg
