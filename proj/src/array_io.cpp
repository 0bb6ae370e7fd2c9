#include "monoflow/array_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <mutex>

#include <nlohmann/json.hpp>

#include "monoflow/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; big-endian hosts unsupported");

namespace monoflow::io {

namespace {
std::function<void(const std::string&, const std::string&)> g_audit;
std::mutex g_audit_mu;
thread_local std::string t_phase = "";
}  // namespace

void set_read_audit(std::function<void(const std::string&, const std::string&)> hook) {
    std::lock_guard<std::mutex> lk(g_audit_mu);
    g_audit = std::move(hook);
}

void notify_read(const std::string& path) {
    std::lock_guard<std::mutex> lk(g_audit_mu);
    if (g_audit) g_audit(t_phase, path);
}

AuditScope::AuditScope(std::string phase) : prev_(t_phase) { t_phase = std::move(phase); }
AuditScope::~AuditScope() { t_phase = prev_; }
const std::string& AuditScope::current() { return t_phase; }

void write_array(const std::string& path, const ArrayF& arr) {
    size_t n = 1;
    for (int d : arr.shape) n *= static_cast<size_t>(d);
    if (n != arr.data.size())
        throw IoError("write_array: shape/data mismatch for " + path);

    nlohmann::json hdr;
    hdr["dtype"] = "f32le";
    hdr["shape"] = arr.shape;
    const std::string line = hdr.dump() + "\n";

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for write: " + path);
    bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
    ok = ok && std::fwrite(arr.data.data(), sizeof(float), n, f) == n;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) throw IoError("short write: " + path);
}

ArrayF read_array(const std::string& path) {
    notify_read(path);
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path);

    std::string line;
    int c;
    while ((c = std::fgetc(f)) != EOF && c != '\n') line.push_back(static_cast<char>(c));
    if (c == EOF) {
        std::fclose(f);
        throw IoError("missing header line: " + path);
    }

    ArrayF arr;
    try {
        auto hdr = nlohmann::json::parse(line);
        if (hdr.at("dtype").get<std::string>() != "f32le")
            throw IoError("unsupported dtype in " + path);
        arr.shape = hdr.at("shape").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        std::fclose(f);
        throw IoError("bad header in " + path + ": " + e.what());
    }

    size_t n = 1;
    for (int d : arr.shape) n *= static_cast<size_t>(d);
    arr.data.resize(n);
    const size_t got = std::fread(arr.data.data(), sizeof(float), n, f);
    std::fclose(f);
    if (got != n) throw IoError("truncated array: " + path);
    return arr;
}

}  // namespace monoflow::io
