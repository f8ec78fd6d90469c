/** Error classes the CLI maps onto exit codes (2 usage, 3 data, 4 model/io). */

export class UsageError extends Error {}
export class DataError extends Error {}
export class ModelError extends Error {}
