/** Error surfacing: structured service errors become toasts carrying the
 * machine code next to the human message.
 */

import { ApiError } from "./api";

export interface Toast {
  code: string;
  message: string;
}

export class ToastLog {
  readonly toasts: Toast[] = [];

  constructor(private readonly onShow?: (t: Toast) => void) {}

  surface(err: unknown): Toast {
    let t: Toast;
    if (err instanceof ApiError) {
      t = { code: err.code, message: err.message };
    } else if (err instanceof Error) {
      t = { code: "client_error", message: err.message };
    } else {
      t = { code: "client_error", message: String(err) };
    }
    this.toasts.push(t);
    this.onShow?.(t);
    return t;
  }
}
