#include "paramscope/fetch.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <zlib.h>

namespace paramscope {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const MirrorFile& m) {
    j = nlohmann::json{{"name", m.name}, {"url", m.url}, {"sha256", m.sha256}};
    if (!m.member.empty()) j["member"] = m.member;
}

void from_json(const nlohmann::json& j, MirrorFile& m) {
    for (const auto& [key, _] : j.items())
        if (key != "name" && key != "url" && key != "sha256" && key != "member")
            throw std::invalid_argument("unknown mirror field '" + key + "'");
    m.name = j.at("name").get<std::string>();
    m.url = j.at("url").get<std::string>();
    m.sha256 = j.value("sha256", std::string{});
    m.member = j.value("member", std::string{});
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const fs::path& p, std::span<const std::uint8_t> bytes) {
    const fs::path tmp = p.string() + ".part";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, p);
}

void write_text(const fs::path& p, const std::string& text) {
    std::vector<std::uint8_t> b(text.begin(), text.end());
    write_atomic(p, b);
}

std::string lower_hex_token(std::string s) {
    std::string out;
    for (char c : s) {
        if (std::isxdigit(static_cast<unsigned char>(c)))
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (!out.empty())
            break;
    }
    return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct UrlParts {
    std::string scheme_host;
    std::string path;
};

UrlParts split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw NetworkError("malformed URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<std::uint8_t> get_once(const std::string& url) {
    if (url.rfind("file://", 0) == 0) {
        const fs::path p = url.substr(7);
        if (!fs::exists(p)) throw NetworkError("no such file: " + p.string());
        return read_bytes(p);
    }
    if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0)
        throw NetworkError("unsupported URL scheme: " + url);
    const auto parts = split_url(url);
    httplib::Client cli(parts.scheme_host);
    cli.set_follow_location(true);
    cli.set_connection_timeout(std::chrono::seconds(15));
    cli.set_read_timeout(std::chrono::seconds(120));
    auto res = cli.Get(parts.path);
    if (!res) throw NetworkError("GET " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw NetworkError("GET " + url + " returned HTTP " + std::to_string(res->status));
    return {res->body.begin(), res->body.end()};
}

}  // namespace

std::string sha256_file(const fs::path& p) { return sha256_hex(read_bytes(p)); }

std::vector<std::uint8_t> http_get(const std::string& url, const FetchOptions& opts) {
    auto delay = opts.backoff;
    std::string last;
    for (int attempt = 1; attempt <= std::max(1, opts.attempts); ++attempt) {
        try {
            return get_once(url);
        } catch (const NetworkError& e) {
            last = e.what();
            if (opts.log) opts.log("attempt " + std::to_string(attempt) + " failed: " + last);
            if (attempt < opts.attempts) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
        }
    }
    throw NetworkError(last);
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw std::runtime_error("gunzip: inflateInit failed");
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 20);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw ChecksumError("gunzip: corrupt gzip stream");
        }
        out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(chunk.size() - zs.avail_out));
        if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw ChecksumError("gunzip: truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

std::vector<std::uint8_t> tar_extract(std::span<const std::uint8_t> archive, const std::string& member) {
    std::size_t off = 0;
    while (off + 512 <= archive.size()) {
        const auto* h = archive.data() + off;
        if (h[0] == 0) break;
        std::string name(reinterpret_cast<const char*>(h), strnlen(reinterpret_cast<const char*>(h), 100));
        const std::string prefix(reinterpret_cast<const char*>(h + 345), strnlen(reinterpret_cast<const char*>(h + 345), 155));
        if (!prefix.empty()) name = prefix + "/" + name;
        const std::string size_field(reinterpret_cast<const char*>(h + 124), 12);
        const std::size_t size = std::stoull(size_field.c_str()[0] ? size_field : "0", nullptr, 8);
        const std::size_t data = off + 512;
        if (data + size > archive.size()) throw ChecksumError("tar: truncated archive");
        if (name == member || ends_with(name, "/" + member))
            return {archive.begin() + static_cast<std::ptrdiff_t>(data),
                    archive.begin() + static_cast<std::ptrdiff_t>(data + size)};
        off = data + (size + 511) / 512 * 512;
    }
    throw std::runtime_error("tar: member '" + member + "' not found");
}

void verify_cache(const std::string& dataset, std::span<const MirrorFile> files, const fs::path& cache_dir) {
    const fs::path dir = cache_dir / dataset;
    for (const auto& f : files) {
        const fs::path target = dir / f.name;
        if (!fs::exists(target)) continue;
        std::string expected = f.sha256;
        const fs::path sidecar = target.string() + ".sha256";
        if (expected.empty() && fs::exists(sidecar)) {
            auto b = read_bytes(sidecar);
            expected = lower_hex_token(std::string(b.begin(), b.end()));
        }
        if (expected.empty()) continue;
        const std::string actual = sha256_file(target);
        if (actual != expected)
            throw ChecksumError("checksum mismatch for " + target.string() + ": expected " + expected + ", got " + actual);
    }
}

FetchResult fetch(const std::string& dataset, std::span<const MirrorFile> files, const fs::path& cache_dir,
                  const FetchOptions& opts) {
    const fs::path dir = cache_dir / dataset;
    fs::create_directories(dir);
    FetchResult result;
    std::map<std::string, std::vector<std::uint8_t>> payloads;  // url -> decompressed payload
    for (const auto& f : files) {
        const fs::path target = dir / f.name;
        result.files.push_back(target);
        if (!f.sha256.empty() && fs::exists(target) && sha256_file(target) == f.sha256) {
            if (opts.log) opts.log(f.name + ": cached");
            continue;
        }
        std::string expected = f.sha256;
        if (expected.empty()) {
            auto side = http_get(f.url + ".sha256", opts);
            expected = lower_hex_token(std::string(side.begin(), side.end()));
            if (expected.size() != 64) throw ChecksumError("sidecar for " + f.url + " holds no SHA-256 digest");
            if (fs::exists(target) && sha256_file(target) == expected) {
                if (opts.log) opts.log(f.name + ": cached");
                continue;
            }
        }
        auto it = payloads.find(f.url);
        if (it == payloads.end()) {
            if (opts.log) opts.log(f.name + ": downloading " + f.url);
            auto body = http_get(f.url, opts);
            if (ends_with(f.url, ".gz") || ends_with(f.url, ".tgz")) body = gunzip(body);
            it = payloads.emplace(f.url, std::move(body)).first;
        }
        std::vector<std::uint8_t> content = f.member.empty() ? it->second : tar_extract(it->second, f.member);
        const std::string actual = sha256_hex(content);
        if (actual != expected)
            throw ChecksumError("checksum mismatch for " + f.name + " from " + f.url + ": expected " + expected +
                                ", got " + actual);
        write_atomic(target, content);
        write_text(target.string() + ".sha256", actual + "  " + f.name + "\n");
        ++result.downloaded;
    }
    return result;
}

}  // namespace paramscope
