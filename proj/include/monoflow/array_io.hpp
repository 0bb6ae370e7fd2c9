#pragma once

// Flat array files: one-line JSON header {"dtype":"f32le","shape":[H,W,(C)]}
// terminated by '\n', followed by raw little-endian float32, row-major.
// Every module exchanges array data through this format only.

#include <functional>
#include <string>
#include <vector>

namespace monoflow::io {

struct ArrayF {
    std::vector<int> shape;      // [H,W] or [H,W,C]
    std::vector<float> data;     // row-major

    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    size_t size() const { return data.size(); }
};

void write_array(const std::string& path, const ArrayF& arr);
ArrayF read_array(const std::string& path);

// Read-audit: when set, invoked with (phase, path) for every file opened for
// reading through this module (arrays and PNGs). Tests use it to prove the
// training step never touches ground truth.
void set_read_audit(std::function<void(const std::string&, const std::string&)> hook);
void notify_read(const std::string& path);

// RAII phase label for the audit, thread-local.
class AuditScope {
public:
    explicit AuditScope(std::string phase);
    ~AuditScope();
    static const std::string& current();

private:
    std::string prev_;
};

}  // namespace monoflow::io
