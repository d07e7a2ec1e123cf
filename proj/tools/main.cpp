// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return shortcut::cli::run(argc, argv); }
