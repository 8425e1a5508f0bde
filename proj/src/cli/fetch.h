// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CONTSUP_CLI_FETCH_H_
#define CONTSUP_CLI_FETCH_H_

#include <string>

namespace contsup {

// Downloads one of the supported public datasets into `root` and unpacks it
// into the layout the loaders expect:
//   cifar10 -> <root>/cifar-10-batches-bin/*.bin
//   svhn    -> <root>/svhn/{train,test}_32x32.mat
//   stl10   -> <root>/stl10_binary/*.bin
// Re-downloading is skipped when the expected files already exist.
// Requires network support at build time; otherwise throws IngestError with
// manual download instructions. The toy dataset needs no fetch.
void fetch_dataset(const std::string& name, const std::string& root);

}  // namespace contsup

#endif  // CONTSUP_CLI_FETCH_H_
