// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "cli/fetch.h"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "core/errors.h"
#include "data/archive.h"

#if defined(CONTSUP_HAVE_CURL)
#include <curl/curl.h>
#endif

namespace contsup {

namespace fs = std::filesystem;

namespace {

struct FetchItem {
  std::string url;
  std::string local_name;  // file name under <root>/<subdir>/
  bool is_tar_gz = false;
};

struct FetchPlan {
  std::string subdir;              // created under root
  std::vector<std::string> marks;  // files proving the dataset is present
  std::vector<FetchItem> items;
};

FetchPlan plan_for(const std::string& name) {
  if (name == "cifar10") {
    return {"",
            {"cifar-10-batches-bin/data_batch_1.bin",
             "cifar-10-batches-bin/test_batch.bin"},
            {{"https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
              "cifar-10-binary.tar.gz", true}}};
  }
  if (name == "svhn") {
    return {"svhn",
            {"svhn/train_32x32.mat", "svhn/test_32x32.mat"},
            {{"http://ufldl.stanford.edu/housenumbers/train_32x32.mat",
              "train_32x32.mat", false},
             {"http://ufldl.stanford.edu/housenumbers/test_32x32.mat",
              "test_32x32.mat", false}}};
  }
  if (name == "stl10") {
    return {"",
            {"stl10_binary/train_X.bin", "stl10_binary/test_X.bin"},
            {{"http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
              "stl10_binary.tar.gz", true}}};
  }
  if (name == "toy") {
    throw ConfigError("fetch-data: the toy dataset is generated on the fly");
  }
  throw ConfigError("fetch-data: unknown dataset '" + name + "'");
}

#if defined(CONTSUP_HAVE_CURL)

size_t append_to_string(char* ptr, size_t size, size_t nmemb, void* userdata) {
  auto* out = static_cast<std::string*>(userdata);
  out->append(ptr, size * nmemb);
  return size * nmemb;
}

std::string download(const std::string& url) {
  CURL* curl = curl_easy_init();
  if (curl == nullptr) {
    throw IngestError("fetch-data: failed to initialize the HTTP client");
  }
  std::string body;
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, append_to_string);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
  curl_easy_setopt(curl, CURLOPT_USERAGENT, "contsup-fetch/1.0");
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  if (rc != CURLE_OK) {
    throw IngestError("fetch-data: download failed for " + url + ": " +
                      curl_easy_strerror(rc));
  }
  return body;
}

#endif  // CONTSUP_HAVE_CURL

bool all_marks_present(const FetchPlan& plan, const std::string& root) {
  for (const std::string& mark : plan.marks) {
    if (!fs::exists(fs::path(root) / mark)) {
      return false;
    }
  }
  return true;
}

}  // namespace

void fetch_dataset(const std::string& name, const std::string& root) {
  const FetchPlan plan = plan_for(name);
  if (all_marks_present(plan, root)) {
    std::printf("%s already present under %s\n", name.c_str(), root.c_str());
    return;
  }
#if defined(CONTSUP_HAVE_CURL)
  const fs::path base =
      plan.subdir.empty() ? fs::path(root) : fs::path(root) / plan.subdir;
  fs::create_directories(base);
  for (const FetchItem& item : plan.items) {
    std::printf("downloading %s\n", item.url.c_str());
    std::fflush(stdout);
    const std::string body = download(item.url);
    if (body.empty()) {
      throw IngestError("fetch-data: empty response for " + item.url);
    }
    if (item.is_tar_gz) {
      const fs::path archive = fs::path(root) / item.local_name;
      write_file_bytes(archive.string(), body.data(), body.size());
      extract_tar_archive(archive.string(), root);
      fs::remove(archive);
    } else {
      write_file_bytes((base / item.local_name).string(), body.data(),
                       body.size());
    }
  }
  if (!all_marks_present(plan, root)) {
    throw IngestError(
        "fetch-data: download finished but the expected files are missing "
        "under " +
        root);
  }
  std::printf("%s ready under %s\n", name.c_str(), root.c_str());
#else
  std::string msg =
      "fetch-data: this build has no HTTP client; download manually:\n";
  for (const FetchItem& item : plan.items) {
    msg += "  " + item.url + "\n";
  }
  msg += plan.items.front().is_tar_gz
             ? "then extract the archive into " + root
             : "then place the files into " +
                   (fs::path(root) / plan.subdir).string();
  throw IngestError(msg);
#endif
}

}  // namespace contsup
