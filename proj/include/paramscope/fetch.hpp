#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace paramscope {

class ChecksumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One cached file and where to get it.
///
/// `url` may use http, https or file. A ".gz" URL is gunzipped; when `member`
/// is set the (decompressed) payload is a tar archive and only that member is
/// kept. `sha256` pins the final file content; when empty, the digest is read
/// from the sidecar `<url>.sha256`.
struct MirrorFile {
    std::string name;
    std::string url;
    std::string sha256;
    std::string member;
};

void to_json(nlohmann::json& j, const MirrorFile& m);
void from_json(const nlohmann::json& j, MirrorFile& m);

struct FetchOptions {
    int attempts = 3;
    std::chrono::milliseconds backoff{500};  ///< doubled after each failed attempt
    std::function<void(const std::string&)> log;
};

struct FetchResult {
    std::vector<std::filesystem::path> files;
    std::size_t downloaded = 0;  ///< files transferred; 0 when the cache was already valid
};

/// Ensure every mirror file exists under `cache_dir/dataset` with a matching
/// checksum. Valid files are skipped without network traffic. A mismatching
/// download raises ChecksumError and nothing is written. Each stored file gets
/// a `<name>.sha256` sidecar.
FetchResult fetch(const std::string& dataset, std::span<const MirrorFile> files,
                  const std::filesystem::path& cache_dir, const FetchOptions& opts = {});

/// Throws ChecksumError if a cached file is present but does not match its
/// recorded digest (pinned, else its local sidecar).
void verify_cache(const std::string& dataset, std::span<const MirrorFile> files,
                  const std::filesystem::path& cache_dir);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& p);

/// GET with retries and exponential backoff; throws NetworkError at the end.
std::vector<std::uint8_t> http_get(const std::string& url, const FetchOptions& opts = {});

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes);
/// Contents of `member` in a ustar archive; throws if absent.
std::vector<std::uint8_t> tar_extract(std::span<const std::uint8_t> archive, const std::string& member);

}  // namespace paramscope
