#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <curl/curl.h>
#include <openssl/evp.h>

#include "anml/cli.hpp"
#include "anml/errors.hpp"

#ifndef ANML_DEFAULT_DATA_DIR
#define ANML_DEFAULT_DATA_DIR "data"
#endif

namespace fs = std::filesystem;

namespace anml::cli {
namespace {

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

std::size_t write_to_file(char* data, std::size_t size, std::size_t count, void* user) {
  auto* file = static_cast<std::FILE*>(user);
  return std::fwrite(data, size, count, file) * size;
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

fs::path data_dir() {
  const std::string env = env_or_empty("ANML_DATA_DIR");
  return env.empty() ? fs::path(ANML_DEFAULT_DATA_DIR) : fs::path(env);
}

fs::path cache_dir() {
  if (auto v = env_or_empty("ANML_CACHE_DIR"); !v.empty()) return v;
  if (auto v = env_or_empty("XDG_CACHE_HOME"); !v.empty()) return fs::path(v) / "anml";
  if (auto v = env_or_empty("HOME"); !v.empty()) return fs::path(v) / ".cache" / "anml";
  return fs::temp_directory_path() / "anml-cache";
}

nlohmann::json load_manifest() {
  const fs::path path = data_dir() / "manifest.json";
  std::ifstream in(path);
  if (!in) throw InvalidInput("dataset manifest not found: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput("dataset manifest: " + std::string(e.what()));
  }
}

fs::path fetch_dataset(const std::string& name, bool force, std::ostream& log) {
  const nlohmann::json manifest = load_manifest();
  const auto& entries = manifest.at("datasets");
  if (!entries.contains(name)) throw InvalidInput("dataset not in manifest: " + name);
  const auto& entry = entries.at(name);
  if (entry.contains("bundled")) return data_dir() / entry.at("bundled").get<std::string>();

  const std::string url = entry.at("url").get<std::string>();
  const fs::path dir = cache_dir();
  fs::create_directories(dir);
  const fs::path target = dir / name;
  const auto expected = entry.value("sha256", nlohmann::json());

  if (!force && fs::exists(target)) {
    log << "cached: " << target.string() << '\n';
  } else {
    const fs::path partial = dir / (name + ".part");
    std::FILE* file = std::fopen(partial.c_str(), "wb");
    if (!file) throw Error("cannot write " + partial.string());
    CURL* curl = curl_easy_init();
    if (!curl) {
      std::fclose(file);
      throw Error("fetch: curl initialisation failed");
    }
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, write_to_file);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, file);
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    const CURLcode rc = curl_easy_perform(curl);
    curl_easy_cleanup(curl);
    std::fclose(file);
    if (rc != CURLE_OK) {
      fs::remove(partial);
      throw Error("fetch " + url + ": " + curl_easy_strerror(rc));
    }
    fs::rename(partial, target);
    log << "downloaded: " << url << " -> " << target.string() << '\n';
  }

  const std::string digest = sha256_file(target);
  if (expected.is_string()) {
    if (expected.get<std::string>() != digest) {
      throw Error("checksum mismatch for " + name + ": got " + digest);
    }
  } else {
    log << "sha256 " << digest << " (manifest has no checksum to compare)\n";
  }
  return target;
}

}  // namespace anml::cli
