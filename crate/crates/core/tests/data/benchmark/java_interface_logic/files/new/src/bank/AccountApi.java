package bank;

import java.util.Optional;

/**
 * Read access to accounts.
 */
public interface AccountApi {
    Optional<Account> find(String id);

    long balance(String id);

    /**
     * Whether the account may be closed.
     */
    boolean canClose(String id);
}
