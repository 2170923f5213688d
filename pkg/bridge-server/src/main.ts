/** CLI entry: load a model profile and serve the bridge protocol. */

import * as fs from "node:fs";
import * as path from "node:path";
import * as url from "node:url";

import { createBridgeServer } from "./server.js";

interface ProfileFile {
  default?: string;
  profiles?: Record<string, { implementation?: string } & Record<string, unknown>>;
}

function parseArgs(argv: string[]): Record<string, string> {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 1) {
    const arg = argv[i];
    if (!arg.startsWith("--")) continue;
    const key = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      args[key] = "true";
    } else {
      args[key] = value;
      i += 1;
    }
  }
  return args;
}

export function main(argv: string[] = process.argv.slice(2)): void {
  const args = parseArgs(argv);
  const here = path.dirname(url.fileURLToPath(import.meta.url));
  const profilesPath = args["profiles-file"] ?? path.join(here, "..", "profiles.json");

  let profileFile: ProfileFile = {};
  if (fs.existsSync(profilesPath)) {
    profileFile = JSON.parse(fs.readFileSync(profilesPath, "utf-8")) as ProfileFile;
  }
  const profileName = args.profile ?? profileFile.default ?? "synthetic";
  const profile = profileFile.profiles?.[profileName];
  const implementation = profile?.implementation ?? (profileName === "synthetic" ? "synthetic" : undefined);
  if (implementation !== "synthetic") {
    process.stderr.write(
      `bridge-server: error: profile ${JSON.stringify(profileName)} needs implementation ` +
        `"synthetic"; real model profiles require their runtime to be installed\n`,
    );
    process.exit(1);
  }

  const host = args.host ?? "127.0.0.1";
  const port = Number.parseInt(args.port ?? "8895", 10);
  const server = createBridgeServer({ host, port, profile: profileName });
  server.listen(port, host, () => {
    const address = server.address();
    const boundPort = typeof address === "object" && address ? address.port : port;
    process.stdout.write(`bridge-server listening on ${host}:${boundPort} (profile: ${profileName})\n`);
  });
  const shutdown = () => {
    server.close(() => process.exit(0));
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  url.pathToFileURL(process.argv[1]).href === import.meta.url;
if (invokedDirectly) {
  main();
}
